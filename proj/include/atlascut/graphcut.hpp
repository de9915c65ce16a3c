#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <vector>

#include "atlascut/errors.hpp"
#include "atlascut/grid.hpp"
#include "atlascut/volume.hpp"

// Binary energy minimization on the 4-connected pixel grid. With two labels a
// single min-cut minimizes the energy exactly (the pairwise terms are
// nonnegative Potts weights, hence submodular), so the solver is an
// augmenting-path max-flow with Boykov-Kolmogorov search trees rather than a
// multi-label expansion loop.

namespace atlascut {

// Edge capacities are quantized to fixed point so the flow computation
// terminates exactly, with no floating-point drift.
constexpr std::int64_t kCapacityScale = std::int64_t(1) << 20;
constexpr std::int64_t kInfiniteCap = std::int64_t(1) << 50;

inline std::int64_t quantize_cost(double cost) {
    return static_cast<std::int64_t>(std::llround(cost * static_cast<double>(kCapacityScale)));
}

// Data and smoothness costs for one slice. cost_bp is charged when a pixel is
// labeled blood pool (the source label), cost_bg when labeled background; the
// pairwise weights are charged when the two endpoint labels differ.
struct EnergyField {
    int nx = 0, ny = 0;
    Field2 cost_bp;
    Field2 cost_bg;
    Field2 w_east;   // edge (x,y)-(x+1,y); last column unused
    Field2 w_south;  // edge (x,y)-(x,y+1); last row unused

    EnergyField() = default;
    EnergyField(int nx_, int ny_)
        : nx(nx_), ny(ny_), cost_bp(nx_, ny_, 0.0f), cost_bg(nx_, ny_, 0.0f),
          w_east(nx_, ny_, 0.0f), w_south(nx_, ny_, 0.0f) {}

    void validate() const {
        auto check = [](const Field2& f, const char* name) {
            for (float v : f.raw())
                if (!(v >= 0.0f) || !std::isfinite(v))
                    throw DegenerateInputError(std::string("energy field ") + name +
                                               " has negative or non-finite cost");
        };
        check(cost_bp, "cost_bp");
        check(cost_bg, "cost_bg");
        check(w_east, "w_east");
        check(w_south, "w_south");
    }
};

// Eq-style data energy: exp(-tau) on the intensity term, 1-exp(-tau) on the
// prior term. As tau grows the prior takes over and confines the region.
inline Field2 data_term(int tau, const Field2& nll_intensity, const Field2& nll_prior) {
    if (tau < 1) throw DegenerateInputError("data_term: tau must be >= 1");
    if (!nll_intensity.same_dims(nll_prior))
        throw DegenerateInputError("data_term: field dims mismatch");
    const double wi = std::exp(-static_cast<double>(tau));
    const double wp = 1.0 - wi;
    Field2 out(nll_intensity.nx(), nll_intensity.ny(), 0.0f);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>(wi * nll_intensity[i] + wp * nll_prior[i]);
    return out;
}

// Contrast-sensitive pairwise weight tau*exp(-|Ip-Iq|/tau), charged when the
// endpoint labels differ.
inline double smoothness_term(int tau, double ip, double iq) {
    if (tau < 1) throw DegenerateInputError("smoothness_term: tau must be >= 1");
    const double t = static_cast<double>(tau);
    return t * std::exp(-std::abs(ip - iq) / t);
}

inline void fill_smoothness(EnergyField& e, const Grid2<float>& img, int tau) {
    for (int y = 0; y < e.ny; ++y)
        for (int x = 0; x < e.nx; ++x) {
            if (x + 1 < e.nx)
                e.w_east(x, y) = static_cast<float>(smoothness_term(tau, img(x, y), img(x + 1, y)));
            if (y + 1 < e.ny)
                e.w_south(x, y) = static_cast<float>(smoothness_term(tau, img(x, y), img(x, y + 1)));
        }
}

// Augmenting-path max-flow with source/sink search trees (Boykov-Kolmogorov).
// Terminal links are consolidated per node: tr_cap > 0 is residual from the
// source, tr_cap < 0 residual to the sink; min(cap_src, cap_snk) is absorbed
// into the flow up front.
class MaxflowGraph {
public:
    explicit MaxflowGraph(int n_nodes)
        : first_(n_nodes, kNone), tr_cap_(n_nodes, 0), parent_(n_nodes, kNone),
          tree_(n_nodes, kFree), active_flag_(n_nodes, 0) {}

    void add_terminal(int i, std::int64_t cap_source, std::int64_t cap_sink) {
        flow_ += std::min(cap_source, cap_sink);
        tr_cap_[i] += cap_source - cap_sink;
    }

    void add_edge(int u, int v, std::int64_t cap, std::int64_t rev_cap) {
        const int a = static_cast<int>(arcs_.size());
        arcs_.push_back({v, first_[u], cap});
        first_[u] = a;
        arcs_.push_back({u, first_[v], rev_cap});
        first_[v] = a + 1;
    }

    std::int64_t solve() {
        const int n = static_cast<int>(first_.size());
        for (int i = 0; i < n; ++i) {
            if (tr_cap_[i] > 0) {
                tree_[i] = kSrc;
                parent_[i] = kTerminalArc;
                activate(i);
            } else if (tr_cap_[i] < 0) {
                tree_[i] = kSnk;
                parent_[i] = kTerminalArc;
                activate(i);
            }
        }
        for (;;) {
            const int bridge = grow();
            if (bridge == kNone) break;
            flow_ += augment(bridge);
            adopt();
        }
        return flow_;
    }

    // Valid after solve(): true when the node ended on the source side.
    bool source_side(int i) const { return tree_[i] == kSrc; }

private:
    struct Arc {
        int head;
        int next;
        std::int64_t rcap;
    };
    static constexpr int kNone = -1;
    static constexpr int kTerminalArc = -2;
    enum : std::uint8_t { kFree = 0, kSrc = 1, kSnk = 2 };

    std::vector<Arc> arcs_;
    std::vector<int> first_;
    std::vector<std::int64_t> tr_cap_;
    std::vector<int> parent_;  // arc out of the node toward its parent
    std::vector<std::uint8_t> tree_;
    std::vector<std::uint8_t> active_flag_;
    std::deque<int> active_;
    std::deque<int> orphans_;
    std::int64_t flow_ = 0;

    void activate(int i) {
        if (!active_flag_[i]) {
            active_flag_[i] = 1;
            active_.push_back(i);
        }
    }

    void make_orphan(int i) {
        parent_[i] = kNone;
        orphans_.push_back(i);
    }

    // Grows both trees from the active nodes; returns a bridging arc u->v with
    // residual capacity, u in the source tree and v in the sink tree, or kNone
    // when the trees can no longer expand.
    int grow() {
        while (!active_.empty()) {
            const int i = active_.front();
            if (tree_[i] == kFree) {
                active_.pop_front();
                active_flag_[i] = 0;
                continue;
            }
            bool found_all = true;
            for (int a = first_[i]; a != kNone; a = arcs_[a].next) {
                const int j = arcs_[a].head;
                if (tree_[i] == kSrc) {
                    if (arcs_[a].rcap <= 0) continue;
                    if (tree_[j] == kFree) {
                        tree_[j] = kSrc;
                        parent_[j] = a ^ 1;
                        activate(j);
                    } else if (tree_[j] == kSnk) {
                        found_all = false;
                        return a;
                    }
                } else {  // sink tree: the usable direction is j -> i
                    if (arcs_[a ^ 1].rcap <= 0) continue;
                    if (tree_[j] == kFree) {
                        tree_[j] = kSnk;
                        parent_[j] = a ^ 1;
                        activate(j);
                    } else if (tree_[j] == kSrc) {
                        found_all = false;
                        return a ^ 1;
                    }
                }
            }
            if (found_all) {
                active_.pop_front();
                active_flag_[i] = 0;
            }
        }
        return kNone;
    }

    std::int64_t augment(int bridge) {
        std::int64_t bottleneck = arcs_[bridge].rcap;
        const int u = arcs_[bridge ^ 1].head;
        const int v = arcs_[bridge].head;

        // bottleneck pass; the roots must be recorded now, before orphaned
        // nodes break the parent chains during the push
        int s_root = u;
        while (parent_[s_root] != kTerminalArc) {
            bottleneck = std::min(bottleneck, arcs_[parent_[s_root] ^ 1].rcap);
            s_root = arcs_[parent_[s_root]].head;
        }
        bottleneck = std::min(bottleneck, tr_cap_[s_root]);
        int t_root = v;
        while (parent_[t_root] != kTerminalArc) {
            bottleneck = std::min(bottleneck, arcs_[parent_[t_root]].rcap);
            t_root = arcs_[parent_[t_root]].head;
        }
        bottleneck = std::min(bottleneck, -tr_cap_[t_root]);

        arcs_[bridge].rcap -= bottleneck;
        arcs_[bridge ^ 1].rcap += bottleneck;

        for (int x = u; parent_[x] != kTerminalArc;) {
            const int pa = parent_[x];
            arcs_[pa ^ 1].rcap -= bottleneck;
            arcs_[pa].rcap += bottleneck;
            const int next = arcs_[pa].head;
            if (arcs_[pa ^ 1].rcap == 0) make_orphan(x);
            x = next;
        }
        tr_cap_[s_root] -= bottleneck;
        if (tr_cap_[s_root] == 0) make_orphan(s_root);

        for (int x = v; parent_[x] != kTerminalArc;) {
            const int pa = parent_[x];
            arcs_[pa].rcap -= bottleneck;
            arcs_[pa ^ 1].rcap += bottleneck;
            const int next = arcs_[pa].head;
            if (arcs_[pa].rcap == 0) make_orphan(x);
            x = next;
        }
        tr_cap_[t_root] += bottleneck;
        if (tr_cap_[t_root] == 0) make_orphan(t_root);

        return bottleneck;
    }

    // Distance to the terminal along parent links, or -1 when the chain is
    // broken by an orphan.
    int root_distance(int start) const {
        int d = 1;
        for (int y = start;; ++d) {
            if (parent_[y] == kTerminalArc) return d;
            if (parent_[y] == kNone) return -1;
            y = arcs_[parent_[y]].head;
        }
    }

    void adopt() {
        while (!orphans_.empty()) {
            const int x = orphans_.front();
            orphans_.pop_front();
            const std::uint8_t tt = tree_[x];
            if (tt == kFree) continue;

            int best_arc = kNone;
            int best_dist = std::numeric_limits<int>::max();
            for (int a = first_[x]; a != kNone; a = arcs_[a].next) {
                const int j = arcs_[a].head;
                if (tree_[j] != tt) continue;
                const std::int64_t cap = (tt == kSrc) ? arcs_[a ^ 1].rcap : arcs_[a].rcap;
                if (cap <= 0) continue;
                const int d = root_distance(j);
                if (d >= 0 && d < best_dist) {
                    best_dist = d;
                    best_arc = a;
                }
            }
            if (best_arc != kNone) {
                parent_[x] = best_arc;
                continue;
            }

            // No parent: x leaves the tree. Its children become orphans and
            // same-tree neighbors that could re-grow toward x become active.
            for (int a = first_[x]; a != kNone; a = arcs_[a].next) {
                const int j = arcs_[a].head;
                if (tree_[j] != tt) continue;
                const std::int64_t cap = (tt == kSrc) ? arcs_[a ^ 1].rcap : arcs_[a].rcap;
                if (cap > 0) activate(j);
                if (parent_[j] != kTerminalArc && parent_[j] != kNone &&
                    arcs_[parent_[j]].head == x)
                    make_orphan(j);
            }
            tree_[x] = kFree;
        }
    }
};

struct MinCutResult {
    Mask2 labels;        // 1 = blood pool (source side)
    std::int64_t flow = 0;  // max flow in fixed-point units == cut energy
};

// Exact global minimizer of the binary energy. Locked pixels receive an
// infinite source capacity, so they are foreground in the output no matter
// what their data terms say.
inline MinCutResult min_cut(const EnergyField& e, const Mask2& locked) {
    e.validate();
    MinCutResult res;
    res.labels = Mask2(e.nx, e.ny, 0);
    if (e.nx == 0 || e.ny == 0) return res;
    if (locked.nx() != e.nx || locked.ny() != e.ny)
        throw DegenerateInputError("min_cut: locked mask dims mismatch");

    const int n = e.nx * e.ny;
    MaxflowGraph g(n);
    for (int y = 0; y < e.ny; ++y)
        for (int x = 0; x < e.nx; ++x) {
            const int i = y * e.nx + x;
            // labeled BP => the node-to-sink link is severed, paying cost_bp
            const std::int64_t cap_src =
                locked(x, y) ? kInfiniteCap : quantize_cost(e.cost_bg(x, y));
            const std::int64_t cap_snk = quantize_cost(e.cost_bp(x, y));
            g.add_terminal(i, cap_src, cap_snk);
            if (x + 1 < e.nx) {
                const std::int64_t w = quantize_cost(e.w_east(x, y));
                if (w > 0) g.add_edge(i, i + 1, w, w);
            }
            if (y + 1 < e.ny) {
                const std::int64_t w = quantize_cost(e.w_south(x, y));
                if (w > 0) g.add_edge(i, i + e.nx, w, w);
            }
        }
    res.flow = g.solve();
    for (int i = 0; i < n; ++i) res.labels[i] = g.source_side(i) ? 1 : 0;
    return res;
}

inline MinCutResult min_cut(const EnergyField& e) {
    return min_cut(e, Mask2(e.nx, e.ny, 0));
}

// Eq.-1 energy of an arbitrary labeling, in real units.
inline double energy_of(const EnergyField& e, const Mask2& labeling) {
    if (labeling.nx() != e.nx || labeling.ny() != e.ny)
        throw DegenerateInputError("energy_of: labeling dims mismatch");
    double acc = 0.0;
    for (int y = 0; y < e.ny; ++y)
        for (int x = 0; x < e.nx; ++x) {
            acc += labeling(x, y) ? e.cost_bp(x, y) : e.cost_bg(x, y);
            if (x + 1 < e.nx && labeling(x, y) != labeling(x + 1, y)) acc += e.w_east(x, y);
            if (y + 1 < e.ny && labeling(x, y) != labeling(x, y + 1)) acc += e.w_south(x, y);
        }
    return acc;
}

// Same energy on the solver's fixed-point capacities; comparisons against the
// brute-force oracle are exact in this domain.
inline std::int64_t energy_fixed(const EnergyField& e, const Mask2& labeling) {
    if (labeling.nx() != e.nx || labeling.ny() != e.ny)
        throw DegenerateInputError("energy_fixed: labeling dims mismatch");
    std::int64_t acc = 0;
    for (int y = 0; y < e.ny; ++y)
        for (int x = 0; x < e.nx; ++x) {
            acc += quantize_cost(labeling(x, y) ? e.cost_bp(x, y) : e.cost_bg(x, y));
            if (x + 1 < e.nx && labeling(x, y) != labeling(x + 1, y))
                acc += quantize_cost(e.w_east(x, y));
            if (y + 1 < e.ny && labeling(x, y) != labeling(x, y + 1))
                acc += quantize_cost(e.w_south(x, y));
        }
    return acc;
}

}  // namespace atlascut
