// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace hyperalign {

double grid_kl(const Tensor& samples, const TiltedTargetGrid& target, std::size_t c) {
    if (samples.rank() != 2 || samples.dim(1) != 2) throw ShapeError("grid_kl: samples must be (n, 2), got " + shape_str(samples.shape()));
    const std::size_t n = samples.dim(0);
    if (n < 1000) throw std::invalid_argument("grid_kl: needs >= 1000 samples, got " + std::to_string(n));
    if (c >= target.num_conditions()) throw std::out_of_range("grid_kl: condition " + std::to_string(c) + " not in target");
    const GridSpec& g = target.grid;
    const std::size_t cells = g.resolution * g.resolution;
    std::vector<double> counts(cells, 0.0);
    std::size_t inside = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const long cell = g.cell_of(samples.at(i, 0), samples.at(i, 1));
        if (cell < 0) continue;
        counts[static_cast<std::size_t>(cell)] += 1.0;
        ++inside;
    }
    if (static_cast<double>(n - inside) > 0.05 * static_cast<double>(n)) {
        throw std::invalid_argument("grid_kl: " + std::to_string(n - inside) + " of " + std::to_string(n) +
                                    " samples fall outside the grid (limit 5%)");
    }
    // Both sides are mixed with the uniform cell distribution at weight
    // kGridKlSmoothing, which keeps the divergence finite where the target
    // underflows to zero.
    const double floor = kGridKlSmoothing / static_cast<double>(cells);
    const double keep = 1.0 - kGridKlSmoothing;
    const auto& q = target.mass[c];
    double kl = 0.0;
    for (std::size_t k = 0; k < cells; ++k) {
        const double p = keep * counts[k] / static_cast<double>(inside) + floor;
        const double t = keep * q[k] + floor;
        kl += p * std::log(p / t);
    }
    return std::max(kl, 0.0);
}

namespace {

// W2^2 between two sorted 1-D empirical distributions by quantile matching.
double w2_sq_sorted(const std::vector<double>& a, const std::vector<double>& b) {
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double u = 0.0, acc = 0.0;
    while (i < a.size() && j < b.size()) {
        const double next = std::min(static_cast<double>(i + 1) / na, static_cast<double>(j + 1) / nb);
        const double diff = a[i] - b[j];
        acc += (next - u) * diff * diff;
        u = next;
        if (static_cast<double>(i + 1) / na <= next) ++i;
        if (static_cast<double>(j + 1) / nb <= next) ++j;
    }
    return acc;
}

}  // namespace

double sliced_w2(const Tensor& a, const Tensor& b, std::size_t n_projections, std::uint64_t seed) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        throw ShapeError("sliced_w2: sample sets must be (n, d) with equal d, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    if (a.dim(0) == 0 || b.dim(0) == 0) throw std::invalid_argument("sliced_w2: sample sets must be nonempty");
    if (n_projections < 32) throw std::invalid_argument("sliced_w2: needs >= 32 projections");
    const std::size_t d = a.dim(1);
    RngStream rng(seed);
    std::vector<double> pa(a.dim(0)), pb(b.dim(0)), u(d);
    double total = 0.0;
    for (std::size_t p = 0; p < n_projections; ++p) {
        double norm = 0.0;
        for (auto& v : u) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : u) v /= norm;
        const auto project = [&](const Tensor& x, std::vector<double>& out) {
            for (std::size_t i = 0; i < x.dim(0); ++i) {
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) s += x.at(i, k) * u[k];
                out[i] = s;
            }
            std::sort(out.begin(), out.end());
        };
        project(a, pa);
        project(b, pb);
        total += std::sqrt(w2_sq_sorted(pa, pb));
    }
    return total / static_cast<double>(n_projections);
}

double diversity(const Tensor& samples) {
    if (samples.rank() != 2) throw ShapeError("diversity: samples must be (n, d), got " + shape_str(samples.shape()));
    const std::size_t n = samples.dim(0), d = samples.dim(1);
    if (n < 2) throw std::invalid_argument("diversity: needs >= 2 samples");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = samples.at(i, k) - samples.at(j, k);
                s += diff * diff;
            }
            total += std::sqrt(s);
        }
    return total / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

FlatDeltaLog flatten_log(std::span<const DeltaLogEntry> log) {
    FlatDeltaLog out;
    for (const auto& e : log) {
        const std::size_t n = e.delta.batch();
        std::vector<std::vector<double>> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = e.delta.flatten(i);
        out.steps.push_back(e.step);
        out.rows.push_back(n == 0 ? Tensor(Shape{0, 0}) : Tensor::from_rows(rows));
    }
    out.validate();
    return out;
}

void FlatDeltaLog::validate() const {
    if (steps.size() != rows.size()) throw std::invalid_argument("delta log: steps and rows differ in length");
    for (std::size_t e = 0; e < steps.size(); ++e) {
        if (e > 0 && steps[e] >= steps[e - 1]) throw std::invalid_argument("delta log: steps must descend");
        if (rows[e].rank() != 2 || rows[e].shape() != rows.front().shape())
            throw ShapeError("delta log: every step must hold the same (rows, width) block");
    }
}

void write_delta_log(const std::filesystem::path& path, const FlatDeltaLog& log, std::span<const std::size_t> cond) {
    log.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const std::size_t width = log.steps.empty() ? 0 : log.rows.front().dim(1);
    out << "step,row,cond";
    for (std::size_t k = 0; k < width; ++k) out << ",p" << k;
    out << '\n';
    out << std::setprecision(17);
    for (std::size_t e = 0; e < log.steps.size(); ++e) {
        for (std::size_t i = 0; i < log.rows[e].dim(0); ++i) {
            out << log.steps[e] << ',' << i << ',' << (i < cond.size() ? cond[i] : 0);
            for (std::size_t k = 0; k < width; ++k) out << ',' << log.rows[e].at(i, k);
            out << '\n';
        }
    }
}

FlatDeltaLog read_delta_log(const std::filesystem::path& path, std::vector<std::size_t>* cond) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("delta log: cannot open " + path.string());
    std::string line;
    std::size_t lineno = 1;
    const auto fail = [&](const std::string& why) {
        throw std::invalid_argument("delta log " + path.string() + " line " + std::to_string(lineno) + ": " + why);
    };
    if (!std::getline(in, line)) fail("missing header");
    std::size_t width = 0;
    {
        std::stringstream hs(line);
        std::string cell;
        std::vector<std::string> cols;
        while (std::getline(hs, cell, ',')) cols.push_back(cell);
        if (cols.size() < 4 || cols[0] != "step" || cols[1] != "row" || cols[2] != "cond") fail("header must be step,row,cond,p0,...");
        width = cols.size() - 3;
    }
    FlatDeltaLog log;
    std::vector<std::vector<double>> block;
    std::vector<std::size_t> block_cond;
    bool first_block = true;
    const auto flush = [&]() {
        if (block.empty()) return;
        log.rows.push_back(Tensor::from_rows(block));
        if (first_block && cond) *cond = block_cond;
        first_block = false;
        block.clear();
        block_cond.clear();
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ls, cell, ',')) {
            char* endp = nullptr;
            const double v = std::strtod(cell.c_str(), &endp);
            if (cell.empty() || *endp != '\0' || !std::isfinite(v)) fail("bad number '" + cell + "'");
            vals.push_back(v);
        }
        if (vals.size() != width + 3) fail("expected " + std::to_string(width + 3) + " fields, got " + std::to_string(vals.size()));
        const int step = static_cast<int>(vals[0]);
        if (static_cast<double>(step) != vals[0]) fail("step must be an integer");
        if (log.steps.empty() || step != log.steps.back()) {
            if (!log.steps.empty() && step > log.steps.back()) fail("steps must descend");
            flush();
            log.steps.push_back(step);
        }
        if (vals[1] != static_cast<double>(block.size())) fail("rows must count up from 0 within a step");
        block_cond.push_back(static_cast<std::size_t>(vals[2]));
        block.emplace_back(vals.begin() + 3, vals.end());
    }
    flush();
    if (log.steps.empty()) fail("no entries");
    for (std::size_t e = 0; e < log.rows.size(); ++e)
        if (log.rows[e].shape() != log.rows.front().shape())
            throw std::invalid_argument("delta log " + path.string() + ": step " + std::to_string(log.steps[e]) +
                                        " has a different row count");
    return log;
}

LoraDriftReport lora_drift(const FlatDeltaLog& log, std::size_t row) {
    if (log.steps.empty()) throw std::invalid_argument("lora_drift: empty delta log");
    log.validate();
    if (row >= log.rows.front().dim(0)) throw std::out_of_range("lora_drift: row " + std::to_string(row) + " not in log");
    const std::size_t D = log.rows.front().dim(1);
    const Tensor& first = log.rows.front();
    double ref_sq = 0.0, ref_l1 = 0.0;
    for (std::size_t k = 0; k < D; ++k) {
        ref_sq += first.at(row, k) * first.at(row, k);
        ref_l1 += std::abs(first.at(row, k));
    }
    if (ref_sq == 0.0) throw std::invalid_argument("lora_drift: step-T delta is zero (untrained hypernet?)");
    LoraDriftReport out;
    for (std::size_t e = 0; e < log.steps.size(); ++e) {
        const Tensor& cur = log.rows[e];
        double dot = 0.0, sq = 0.0, l1 = 0.0;
        for (std::size_t k = 0; k < D; ++k) {
            dot += cur.at(row, k) * first.at(row, k);
            sq += cur.at(row, k) * cur.at(row, k);
            l1 += std::abs(cur.at(row, k) - first.at(row, k));
        }
        out.steps.push_back(log.steps[e]);
        out.cosine.push_back(e == 0 ? 1.0 : (sq == 0.0 ? 0.0 : dot / std::sqrt(sq * ref_sq)));
        out.l1_change.push_back(e == 0 ? 0.0 : l1 / ref_l1);
    }
    return out;
}

LoraDriftReport lora_drift(std::span<const DeltaLogEntry> log, std::size_t row) {
    if (log.empty()) throw std::invalid_argument("lora_drift: empty delta log");
    FlatDeltaLog flat;
    for (const auto& e : log) {
        flat.steps.push_back(e.step);
        flat.rows.push_back(Tensor::from_rows({e.delta.flatten(row)}));
    }
    return lora_drift(flat, 0);
}

std::vector<LoraPcaStep> lora_pca(const FlatDeltaLog& log, std::span<const int> steps) {
    log.validate();
    std::vector<LoraPcaStep> out;
    for (int t : steps) {
        const auto it = std::find(log.steps.begin(), log.steps.end(), t);
        if (it == log.steps.end()) throw std::invalid_argument("lora_pca: step " + std::to_string(t) + " not in log");
        const Tensor& rows = log.rows[static_cast<std::size_t>(it - log.steps.begin())];
        LoraPcaStep s;
        s.step = t;
        s.pca = pca2(rows);
        const std::size_t n = rows.dim(0);
        for (std::size_t i = 0; i < n; ++i)
            for (int k = 0; k < 2; ++k) s.projected_variance += s.pca.coords.at(i, k) * s.pca.coords.at(i, k);
        s.projected_variance /= static_cast<double>(n);
        out.push_back(std::move(s));
    }
    return out;
}

PcaResult pca2(const Tensor& points) {
    if (points.rank() != 2) throw ShapeError("pca: points must be (n, D), got " + shape_str(points.shape()));
    const auto n = static_cast<Eigen::Index>(points.dim(0));
    const auto D = static_cast<Eigen::Index>(points.dim(1));
    if (n < 3) throw std::invalid_argument("pca: needs >= 3 points");
    Eigen::MatrixXd X = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        points.data(), n, D);
    X.rowwise() -= X.colwise().mean();
    // The Gram matrix shares the nonzero spectrum of the covariance and is
    // small when D >> n.
    const Eigen::MatrixXd G = X * X.transpose();
    const double trace = G.trace();
    if (!(trace > 0.0)) throw std::invalid_argument("pca: all points are equal");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
    PcaResult out;
    out.coords = Tensor(Shape{static_cast<std::size_t>(n), 2});
    for (int k = 0; k < 2; ++k) {
        const Eigen::Index idx = n - 1 - k;  // eigenvalues ascend
        const double lambda = std::max(eig.eigenvalues()(idx), 0.0);
        out.explained.push_back(lambda / trace);
        Eigen::VectorXd v = eig.eigenvectors().col(idx);
        // Sign convention: largest-magnitude coordinate positive.
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        for (Eigen::Index i = 0; i < n; ++i) out.coords.at(static_cast<std::size_t>(i), k) = v(i) * std::sqrt(lambda);
    }
    return out;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal-length series, n >= 2");
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace hyperalign
