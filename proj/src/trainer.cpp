#include "cmems/trainer.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>

#include "cmems/checkpoint.hpp"
#include "cmems/evalmetrics.hpp"
#include "cmems/perturbation.hpp"
#include "cmems/synthesis.hpp"

namespace cmems {

namespace {

// Stream purposes inside one iteration.
enum : std::uint64_t {
    kBatchStream = 1,
    kWeakStream = 2,
    kStrongStream = 3,
    kDropoutStream = 4,
    kFeatureStream = 5,
};

// Gradient-bearing passes, used to key dropout streams.
enum Pass : std::uint64_t { kPassPseudo = 0, kPassIp = 1, kPassFp = 2, kPassExemplar = 3, kPassSynthetic = 4 };

std::uint64_t pass_seed(std::uint64_t seed, Pass pass, int m) { return derive_seed(seed, kDropoutStream, pass, m); }

AdamConfig adam_config(const TrainConfig& cfg) {
    return AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
}

// Forward, loss and (optionally) backward of one prediction against one target.
// A zero-weight pass is evaluated for logging only and leaves the network untouched.
double run_pass(NetworkParams& net, const Tensor& x, const PseudoLabel& target, double weight,
                std::uint64_t dropout_seed, const std::optional<std::uint64_t>& feature_seed, double drop_prob,
                std::vector<real>* grad) {
    Rng rng(dropout_seed);
    PassOptions opts{true, &rng, weight != 0.0};
    const bool backward = grad != nullptr && weight != 0.0;
    EncoderCache ec;
    DecoderCache dc;
    FeaturePyramid pyr = encode(net, x, opts, backward ? &ec : nullptr);
    FeaturePerturbParams fp;
    if (feature_seed) {
        Rng frng(*feature_seed);
        fp = sample_feature_perturb(pyr, drop_prob, frng);
        pyr = apply_feature_perturb(pyr, fp);
    }
    const Tensor logits = decode(net, pyr, opts, backward ? &dc : nullptr);
    const ProbMap p = softmax_probs(logits);
    if (!backward) return seg_loss(p, target);
    Tensor dlogits;
    const double loss = seg_loss_backward(p, target, weight, dlogits);
    FeaturePyramid dpyr = decode_backward(net, dc, dlogits, *grad);
    if (feature_seed) feature_perturb_backward(dpyr, fp);
    encode_backward(net, ec, std::move(dpyr), *grad);
    return loss;
}

void check_finite(const LossBreakdown& b, std::int64_t iter) {
    auto check = [&](const char* name, const std::array<double, 2>& v) {
        for (int m = 0; m < 2; ++m) {
            if (!std::isfinite(v[m])) {
                std::ostringstream os;
                os << "non-finite " << name << " for network " << m + 1 << " at iteration " << iter
                   << " (l_e=" << b.e[0] << "/" << b.e[1] << ", l_s=" << b.s[0] << "/" << b.s[1]
                   << ", l_cmip=" << b.cmip[0] << "/" << b.cmip[1] << ", l_cmfp=" << b.cmfp[0] << "/"
                   << b.cmfp[1] << ")";
                throw NonFiniteLossError(os.str());
            }
        }
    };
    check("l_e", b.e);
    check("l_s", b.s);
    check("l_cmip", b.cmip);
    check("l_cmfp", b.cmfp);
}

}  // namespace

TrainData make_train_data(const LoadedData& data, const TrainConfig& cfg) {
    TrainData t;
    t.exemplar = data.exemplar;
    t.unlabeled = data.unlabeled;
    t.validation = data.val_volumes;
    t.num_classes = data.num_classes;
    t.class_names = data.class_names;
    if (cfg.use_synthetic) t.synthetic = build_synthetic_dataset(data.exemplar, data.unlabeled, cfg.synthesis);
    return t;
}

UNetConfig network_config(const TrainConfig& cfg, int num_classes) {
    return UNetConfig::with_base_width(num_classes, cfg.base_width);
}

TrainState init_state(const TrainConfig& cfg, int num_classes) {
    TrainState s;
    const UNetConfig nc = network_config(cfg, num_classes);
    for (int m = 0; m < 2; ++m) s.nets[m] = init_network(cfg.seed, nc, m + 1);
    s.optimizer = Adam(adam_config(cfg), {s.nets[0].weights.size(), s.nets[1].weights.size()});
    return s;
}

Batch sample_batch(const TrainData& data, int batch_size, Rng& rng) {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (data.unlabeled.images.empty()) throw ValidationError("unlabeled dataset is empty");
    Batch b;
    for (int i = 0; i < batch_size; ++i)
        b.unlabeled.push_back(static_cast<std::size_t>(rng.randint(0, static_cast<int>(data.unlabeled.images.size()) - 1)));
    if (data.synthetic.size() > 0) {
        for (int i = 0; i < batch_size; ++i)
            b.synthetic.push_back(static_cast<std::size_t>(rng.randint(0, static_cast<int>(data.synthetic.size()) - 1)));
    }
    return b;
}

std::uint64_t step_seed(const TrainConfig& cfg, std::int64_t iteration) {
    return derive_seed(cfg.seed, 0x57E9, static_cast<std::uint64_t>(iteration));
}

StepInputs prepare_inputs(const TrainData& data, const Batch& batch, const TrainConfig& cfg, std::uint64_t seed) {
    const int B = static_cast<int>(batch.size());
    const bool with_synthetic = !batch.synthetic.empty();
    std::array<std::vector<Image>, 2> ex_img, syn_img, unl_weak, unl_strong;
    std::array<std::vector<LabelMask>, 2> ex_mask, syn_mask;
    for (int m = 0; m < 2; ++m) {
        ex_img[m].resize(B);
        ex_mask[m].resize(B);
        unl_weak[m].resize(B);
        unl_strong[m].resize(B);
        if (with_synthetic) {
            syn_img[m].resize(B);
            syn_mask[m].resize(B);
        }
    }
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
    for (int g = 0; g < B; ++g) {
        try {
            for (int m = 0; m < 2; ++m) {
                const auto ug = static_cast<std::uint64_t>(g);
                Rng we = Rng::stream(seed, kWeakStream, ug, 0 + (cfg.same_weak_exemplar ? 0 : m));
                auto e = weak(data.exemplar.image, &data.exemplar.mask, we, cfg.weak);
                ex_img[m][g] = std::move(e.image);
                ex_mask[m][g] = std::move(*e.mask);
                if (with_synthetic) {
                    const std::size_t si = batch.synthetic[g];
                    Rng ws = Rng::stream(seed, kWeakStream, ug, 2 + (cfg.same_weak_synthetic ? 0 : m));
                    auto s = weak(data.synthetic.images[si], &data.synthetic.masks[si], ws, cfg.weak);
                    syn_img[m][g] = std::move(s.image);
                    syn_mask[m][g] = std::move(*s.mask);
                }
                Rng wu = Rng::stream(seed, kWeakStream, ug, 4 + (cfg.same_weak_unlabeled ? 0 : m));
                auto u = weak(data.unlabeled.images[batch.unlabeled[g]], nullptr, wu, cfg.weak);
                Rng st = Rng::stream(seed, kStrongStream, ug, m);
                unl_strong[m][g] = strong(u.image, cfg.alpha, st);
                unl_weak[m][g] = std::move(u.image);
            }
        } catch (...) {
#pragma omp critical
            error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);
    StepInputs in;
    for (int m = 0; m < 2; ++m) {
        in.exemplar[m] = to_tensor(ex_img[m]);
        in.exemplar_target[m] = dense_target(ex_mask[m]);
        if (with_synthetic) {
            in.synthetic[m] = to_tensor(syn_img[m]);
            in.synthetic_target[m] = dense_target(syn_mask[m]);
        }
        in.unlabeled_weak[m] = to_tensor(unl_weak[m]);
        in.unlabeled_strong[m] = to_tensor(unl_strong[m]);
    }
    return in;
}

std::array<PseudoLabel, 2> make_pseudo_labels(TrainState& state, const StepInputs& in, const TrainConfig& cfg,
                                              std::uint64_t seed) {
    std::array<PseudoLabel, 2> out;
    for (int m = 0; m < 2; ++m) {
        Tensor logits;
        if (cfg.pseudo_eval_mode) {
            logits = forward_eval(state.nets[m], in.unlabeled_weak[m]);
        } else {
            Rng rng(pass_seed(seed, kPassPseudo, m));
            logits = forward(state.nets[m], in.unlabeled_weak[m], PassOptions{true, &rng, false});
        }
        out[m] = pseudo_label(softmax_probs(logits), cfg.tau, cfg.literal_eq3);
    }
    return out;
}

LossBreakdown accumulate_loss(TrainState& state, const StepInputs& in, const std::array<PseudoLabel, 2>& pseudo,
                              const TrainConfig& cfg, std::uint64_t seed,
                              std::array<std::vector<real>, 2>* grads) {
    std::array<double, 2> e{}, s{}, ip{}, fp{};
    const bool with_synthetic = cfg.use_synthetic && in.synthetic[0].size() > 0;
    for (int m = 0; m < 2; ++m) {
        NetworkParams& net = state.nets[m];
        std::vector<real>* g = grads ? &(*grads)[m] : nullptr;
        if (g && g->size() != net.weights.size()) g->assign(net.weights.size(), real(0));
        if (cfg.use_ip) {
            // P^S_{u,m} = N_m(I^S_{u,m̄}) against Y^W_{u,m̄} (cross), or own view and own label.
            const int src = teacher_of(m, cfg.cross_ip);
            ip[m] = run_pass(net, in.unlabeled_strong[src], pseudo[src], cfg.lambda_cmip, pass_seed(seed, kPassIp, m),
                             std::nullopt, cfg.feature_drop_prob, g);
        }
        if (cfg.use_fp) {
            const int src = teacher_of(m, cfg.cross_fp);
            fp[m] = run_pass(net, in.unlabeled_weak[src], pseudo[src], cfg.lambda_cmfp, pass_seed(seed, kPassFp, m),
                             derive_seed(seed, kFeatureStream, 0, m), cfg.feature_drop_prob, g);
        }
        e[m] = run_pass(net, in.exemplar[m], in.exemplar_target[m], 1.0, pass_seed(seed, kPassExemplar, m),
                        std::nullopt, cfg.feature_drop_prob, g);
        if (with_synthetic) {
            s[m] = run_pass(net, in.synthetic[m], in.synthetic_target[m], 1.0, pass_seed(seed, kPassSynthetic, m),
                            std::nullopt, cfg.feature_drop_prob, g);
        }
    }
    LossBreakdown b = total_loss(e[0] + e[1], s[0] + s[1], ip[0] + ip[1], fp[0] + fp[1], cfg.lambda_cmip,
                                 cfg.lambda_cmfp);
    b.e = e;
    b.s = s;
    b.cmip = ip;
    b.cmfp = fp;
    const std::size_t total = pseudo[0].size() + pseudo[1].size();
    b.valid_pixel_fraction =
        total ? static_cast<double>(pseudo[0].valid_count() + pseudo[1].valid_count()) / static_cast<double>(total)
              : 0.0;
    return b;
}

LossBreakdown train_step(TrainState& state, const TrainData& data, const TrainConfig& cfg) {
    const std::uint64_t seed = step_seed(cfg, state.iteration);
    Rng brng = Rng::stream(seed, kBatchStream);
    const Batch batch = sample_batch(data, cfg.batch_size, brng);
    if (cfg.use_synthetic && batch.synthetic.empty()) throw ValidationError("synthetic dataset is empty");
    const StepInputs in = prepare_inputs(data, batch, cfg, seed);
    std::array<PseudoLabel, 2> pseudo;
    if (cfg.use_ip || cfg.use_fp) pseudo = make_pseudo_labels(state, in, cfg, seed);
    std::array<std::vector<real>, 2> grads;
    const LossBreakdown b = accumulate_loss(state, in, pseudo, cfg, seed, &grads);
    check_finite(b, state.iteration + 1);
    const std::array<std::span<real>, 2> params{std::span<real>(state.nets[0].weights),
                                                std::span<real>(state.nets[1].weights)};
    const std::array<std::span<const real>, 2> gs{std::span<const real>(grads[0]), std::span<const real>(grads[1])};
    state.optimizer.step(params, gs);
    ++state.iteration;
    return b;
}

nlohmann::json to_json(const IterationLog& l) {
    return {{"iter", l.iter},       {"l_e", l.loss.l_e},         {"l_s", l.loss.l_s},
            {"l_cmip", l.loss.l_cmip}, {"l_cmfp", l.loss.l_cmfp}, {"l_total", l.loss.l_total},
            {"valid_pixel_fraction", l.loss.valid_pixel_fraction}};
}

FitResult fit(const TrainData& data, const TrainConfig& cfg, TrainState state, const FitOptions& opts) {
    cfg.validate();
    FitResult r;
    std::ofstream log, evlog;
    if (opts.out_dir) {
        std::filesystem::create_directories(*opts.out_dir);
        const auto mode = state.iteration > 0 ? std::ios::app : std::ios::trunc;
        log.open(*opts.out_dir / "metrics.jsonl", std::ios::out | mode);
        if (!data.validation.empty()) evlog.open(*opts.out_dir / "eval.jsonl", std::ios::out | mode);
    }
    while (state.iteration < cfg.max_iter) {
        const LossBreakdown b = train_step(state, data, cfg);
        IterationLog entry{state.iteration, b};
        if (log) log << to_json(entry).dump() << "\n" << std::flush;
        if (opts.on_step) opts.on_step(entry);
        r.log.push_back(entry);
        const bool eval_now = cfg.eval_every > 0 && !data.validation.empty() &&
                              (state.iteration % cfg.eval_every == 0 || state.iteration == cfg.max_iter);
        if (eval_now) {
            const Report rep = report(evaluate_all(state.nets, data.validation, cfg.eval_network), data.class_names);
            if (evlog) evlog << nlohmann::json{{"iter", state.iteration}, {"val_dsc", rep.dsc_avg}}.dump() << "\n";
            if (opts.on_eval) opts.on_eval(state.iteration, rep.dsc_avg);
            if (!r.best_val_dsc || rep.dsc_avg > *r.best_val_dsc) {
                r.best_val_dsc = rep.dsc_avg;
                r.best_iter = state.iteration;
                if (opts.out_dir) save_checkpoint(*opts.out_dir / "checkpoint_best.bin", state, cfg);
            }
        }
    }
    if (opts.out_dir) save_checkpoint(*opts.out_dir / "checkpoint_final.bin", state, cfg);
    r.state = std::move(state);
    return r;
}

FitResult fit(const TrainData& data, const TrainConfig& cfg, const FitOptions& opts) {
    cfg.validate();
    return fit(data, cfg, init_state(cfg, data.num_classes), opts);
}

}  // namespace cmems
