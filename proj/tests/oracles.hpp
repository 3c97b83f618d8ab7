#pragma once

// Independent reference implementations, written directly from the
// definitions with plain loops. Shared by the unit tests and the acceptance
// runner.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "cmems/evalmetrics.hpp"
#include "cmems/objective.hpp"
#include "cmems/rng.hpp"

namespace oracle {

using namespace cmems;

inline ProbMap random_probs(Rng& rng, int n, int k, int h, int w, double spread = 2.0) {
    Tensor logits(n, k, h, w);
    for (auto& v : logits.span()) v = static_cast<real>(rng.normal(0.0, spread));
    return softmax_probs(logits);
}

inline PseudoLabel random_target(Rng& rng, int n, int k, int h, int w, double valid_prob) {
    PseudoLabel t;
    t.n = n;
    t.h = h;
    t.w = w;
    for (std::size_t i = 0; i < t.size(); ++i) {
        t.classes.push_back(rng.randint(0, k - 1));
        t.valid.push_back(rng.bernoulli(valid_prob) ? 1 : 0);
    }
    return t;
}

/// Per-pixel argmax (first maximum wins) and confidence test.
inline PseudoLabel pseudo_label(const ProbMap& p, double tau, bool literal) {
    const Tensor& t = p.probs;
    PseudoLabel out;
    out.n = t.n();
    out.h = t.h();
    out.w = t.w();
    for (int b = 0; b < t.n(); ++b)
        for (int y = 0; y < t.h(); ++y)
            for (int x = 0; x < t.w(); ++x) {
                int best = 0;
                for (int c = 1; c < t.c(); ++c)
                    if (t.at(b, c, y, x) > t.at(b, best, y, x)) best = c;
                const bool ok = t.at(b, best, y, x) >= tau;
                out.classes.push_back(literal && !ok ? 0 : best);
                out.valid.push_back(literal || ok ? 1 : 0);
            }
    return out;
}

inline double ce(const ProbMap& p, const PseudoLabel& t) {
    double s = 0;
    int count = 0;
    for (int n = 0; n < t.n; ++n)
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x) {
                const std::size_t i = (static_cast<std::size_t>(n) * t.h + y) * t.w + x;
                if (!t.valid[i]) continue;
                s += -std::log(std::max(1e-12, double(p.probs.at(n, t.classes[i], y, x))));
                ++count;
            }
    return count ? s / count : 0.0;
}

inline double dice(const ProbMap& p, const PseudoLabel& t) {
    const int k = p.probs.c();
    double total = 0;
    for (int n = 0; n < t.n; ++n) {
        double mean = 0;
        for (int c = 0; c < k; ++c) {
            double inter = 0, ps = 0, ts = 0;
            for (int y = 0; y < t.h; ++y)
                for (int x = 0; x < t.w; ++x) {
                    const std::size_t i = (static_cast<std::size_t>(n) * t.h + y) * t.w + x;
                    if (!t.valid[i]) continue;
                    const double pv = p.probs.at(n, c, y, x);
                    const double tv = t.classes[i] == c ? 1.0 : 0.0;
                    inter += pv * tv;
                    ps += pv;
                    ts += tv;
                }
            mean += (2 * inter + 1e-5) / (ps + ts + 1e-5) / k;
        }
        total += 1 - mean;
    }
    return total / t.n;
}

inline BinaryVolume make_volume(int d, int h, int w) {
    return {d, h, w, std::vector<std::uint8_t>(std::size_t(d) * h * w, 0)};
}

inline BinaryVolume random_volume(Rng& rng, int d, int h, int w, double p) {
    BinaryVolume v = make_volume(d, h, w);
    for (auto& x : v.voxels) x = rng.bernoulli(p) ? 1 : 0;
    return v;
}

struct Pt {
    int z, y, x;
};

/// Foreground voxels with a background or out-of-bounds face neighbour.
/// A single slice has no z neighbours.
inline std::vector<Pt> surface_points(const BinaryVolume& v) {
    std::vector<Pt> pts;
    auto on = [&](int z, int y, int x) {
        if (z < 0 || y < 0 || x < 0 || z >= v.depth || y >= v.height || x >= v.width) return false;
        return v.voxels[(static_cast<std::size_t>(z) * v.height + y) * v.width + x] != 0;
    };
    for (int z = 0; z < v.depth; ++z)
        for (int y = 0; y < v.height; ++y)
            for (int x = 0; x < v.width; ++x) {
                if (!on(z, y, x)) continue;
                bool inner = on(z, y - 1, x) && on(z, y + 1, x) && on(z, y, x - 1) && on(z, y, x + 1);
                if (v.depth > 1) inner = inner && on(z - 1, y, x) && on(z + 1, y, x);
                if (!inner) pts.push_back({z, y, x});
            }
    return pts;
}

/// Sort plus linear interpolation between closest ranks.
inline double p95(std::vector<double> d) {
    std::sort(d.begin(), d.end());
    const double pos = 0.95 * double(d.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, d.size() - 1);
    return d[lo] + (pos - double(lo)) * (d[hi] - d[lo]);
}

/// All-pairs nearest distances.
inline std::vector<double> directed(const std::vector<Pt>& from, const std::vector<Pt>& to) {
    std::vector<double> out;
    for (const auto& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : to) {
            const double dz = a.z - b.z, dy = a.y - b.y, dx = a.x - b.x;
            best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
        }
        out.push_back(best);
    }
    return out;
}

inline std::optional<double> hd95(const BinaryVolume& a, const BinaryVolume& b) {
    const auto sa = surface_points(a), sb = surface_points(b);
    if (sa.empty() || sb.empty()) return std::nullopt;
    return std::max(p95(directed(sa, sb)), p95(directed(sb, sa)));
}

inline double dsc(const BinaryVolume& a, const BinaryVolume& b) {
    double inter = 0, sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a.voxels[i] && b.voxels[i]) ? 1 : 0;
        sa += a.voxels[i];
        sb += b.voxels[i];
    }
    return sa + sb == 0 ? 1.0 : 2 * inter / (sa + sb);
}

}  // namespace oracle
