#include "geosteer/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace geosteer::harness {

namespace {

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == '\n') {
            out.push_back(text.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

void write_atomic(const std::filesystem::path& path, const std::string& body, const char* what) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error(std::string(what) + ": cannot open " + tmp.string());
        out << body;
        if (!out) throw std::runtime_error(std::string(what) + ": write failed " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

bool exact_match(const corpus::Problem& p, const student::GenerationRecord& rec) {
    return rec.answer.has_value() && *rec.answer == p.gold_answer;
}

std::vector<std::string> generated_steps(const std::string& text) {
    std::vector<std::string> steps;
    for (const std::string& line : split_lines(text)) {
        if (line.empty()) break;
        if (line.rfind(corpus::kAnswerPrefix, 0) == 0) break;
        try {
            corpus::parse_step(line);
        } catch (const std::exception&) {
            break;
        }
        steps.push_back(line);
    }
    return steps;
}

double generation_quality(const corpus::Problem& p, const student::GenerationRecord& rec) {
    std::vector<std::string> steps = generated_steps(rec.text);
    if (steps.empty()) return 0.0;
    double sum = 0.0;
    std::vector<std::string> prefix;
    for (const std::string& s : steps) {
        prefix.push_back(s);
        sum += corpus::oracle_score(p, prefix);
    }
    return sum / static_cast<double>(steps.size());
}

EvalResult evaluate(const student::StudentParams& sp, const manifold::VaeParams& vae,
                    const quality::QualityParams& qp, const std::vector<corpus::Problem>& problems,
                    const steer::SteerConfig& cfg, int max_len) {
    if (problems.empty()) throw std::invalid_argument("evaluate: no problems");

    EvalResult res;
    std::vector<double> norms;
    double quality_sum = 0.0;
    int em_count = 0;

    for (const corpus::Problem& p : problems) {
        steer::SteerResult run =
            steer::steered_generate(sp, vae, qp, student::prompt_tokens(p), cfg, max_len);
        const student::GenerationRecord& rec = run.record;

        EvalItem item;
        item.problem_id = p.id;
        item.exact_match = exact_match(p, rec);
        item.missing_answer = rec.missing_answer;
        item.answer = rec.answer;
        item.gold = p.gold_answer;
        item.steps_generated = generated_steps(rec.text).size();
        item.oracle_quality = generation_quality(p, rec);

        if (item.exact_match) ++em_count;
        quality_sum += item.oracle_quality;
        for (std::size_t slot : rec.step_final_slots) norms.push_back(norm(rec.hiddens[slot]));

        res.items.push_back(std::move(item));
        res.runs.push_back(std::move(run));
    }

    if (norms.empty())
        for (const steer::SteerResult& run : res.runs)
            for (const Tensor& h : run.record.hiddens) norms.push_back(norm(h));

    std::sort(norms.begin(), norms.end());
    std::size_t n = norms.size();
    res.median_hidden_norm =
        n == 0 ? 0.0 : (n % 2 == 1 ? norms[n / 2] : 0.5 * (norms[n / 2 - 1] + norms[n / 2]));
    res.em = 100.0 * static_cast<double>(em_count) / static_cast<double>(problems.size());
    res.mean_quality = quality_sum / static_cast<double>(problems.size());
    return res;
}

PairedCounts paired_compare(const EvalResult& a, const EvalResult& b) {
    if (a.items.size() != b.items.size())
        throw std::invalid_argument("paired_compare: result sizes differ");
    PairedCounts c;
    for (std::size_t i = 0; i < a.items.size(); ++i) {
        const EvalItem& ia = a.items[i];
        const EvalItem& ib = b.items[i];
        if (ia.problem_id != ib.problem_id)
            throw std::invalid_argument("paired_compare: problem order mismatch at " +
                                        std::to_string(i));
        if (ia.exact_match != ib.exact_match) {
            (ia.exact_match ? c.win_a : c.win_b)++;
        } else if (ia.oracle_quality > ib.oracle_quality + 1e-6) {
            ++c.win_a;
        } else if (ib.oracle_quality > ia.oracle_quality + 1e-6) {
            ++c.win_b;
        } else {
            ++c.tie;
        }
    }
    return c;
}

std::pair<int, int> discordant_counts(const EvalResult& a, const EvalResult& b) {
    if (a.items.size() != b.items.size())
        throw std::invalid_argument("discordant_counts: result sizes differ");
    int only_a = 0, only_b = 0;
    for (std::size_t i = 0; i < a.items.size(); ++i) {
        if (a.items[i].problem_id != b.items[i].problem_id)
            throw std::invalid_argument("discordant_counts: problem order mismatch");
        bool ea = a.items[i].exact_match, eb = b.items[i].exact_match;
        if (ea && !eb) ++only_a;
        if (!ea && eb) ++only_b;
    }
    return {only_a, only_b};
}

McNemarResult mcnemar(int b, int c) {
    if (b < 0 || c < 0) throw std::invalid_argument("mcnemar: negative count");
    McNemarResult res;
    if (b + c == 0) {
        res.defined = false;
        return res;
    }
    double d = std::abs(static_cast<double>(b) - static_cast<double>(c)) - 1.0;
    res.chi2 = d * d / static_cast<double>(b + c);
    res.significant = res.chi2 > kChiSqCritical95;
    return res;
}

SweepResult beta_sweep(const student::StudentParams& sp, const manifold::VaeParams& vae,
                       const quality::QualityParams& qp,
                       const std::vector<corpus::Problem>& problems,
                       const std::vector<double>& betas, const steer::SteerConfig& base_cfg,
                       int max_len) {
    if (betas.empty()) throw std::invalid_argument("beta_sweep: empty grid");

    SweepResult res;
    steer::SteerConfig cfg = base_cfg;
    cfg.beta = 0.0;
    res.baseline = evaluate(sp, vae, qp, problems, cfg, max_len);
    res.median_hidden_norm = res.baseline.median_hidden_norm;

    double pct = 100.0 / static_cast<double>(problems.size());
    for (double beta : betas) {
        cfg.beta = beta;
        EvalResult steered = evaluate(sp, vae, qp, problems, cfg, max_len);
        PairedCounts pc = paired_compare(steered, res.baseline);
        auto [only_steered, only_baseline] = discordant_counts(steered, res.baseline);
        McNemarResult mn = mcnemar(only_steered, only_baseline);

        SweepRow row;
        row.beta = beta;
        row.em_baseline = res.baseline.em;
        row.em_steered = steered.em;
        row.win_steered = pct * pc.win_a;
        row.win_baseline = pct * pc.win_b;
        row.tie = pct * pc.tie;
        row.mcnemar_chi2 = mn.chi2;
        row.significant = mn.significant;
        row.quality_steered = steered.mean_quality;
        row.quality_baseline = res.baseline.mean_quality;
        res.rows.push_back(row);
    }
    return res;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
    std::string body =
        "beta,em_baseline,em_steered,win_steered,win_baseline,tie,mcnemar_chi2,significant\n";
    for (const SweepRow& r : rows) {
        body += fmt(r.beta) + ',' + fmt(r.em_baseline) + ',' + fmt(r.em_steered) + ',' +
                fmt(r.win_steered) + ',' + fmt(r.win_baseline) + ',' + fmt(r.tie) + ',' +
                fmt(r.mcnemar_chi2) + ',' + (r.significant ? "1" : "0") + '\n';
    }
    write_atomic(path, body, "write_sweep_csv");
}

namespace {

// leading eigenvector by power iteration over the implicit covariance of
// `centered`; returns a zero vector when the spectrum is degenerate
Tensor top_principal_component(const std::vector<Tensor>& centered, std::size_t k) {
    Tensor v = Tensor::vec(k);
    for (std::size_t i = 0; i < k; ++i) v[i] = 1.0 / std::sqrt(static_cast<double>(k));
    for (int iter = 0; iter < 200; ++iter) {
        Tensor next = Tensor::vec(k);
        for (const Tensor& c : centered) axpy(dot(c, v), c, next);
        double n = norm(next);
        if (n < 1e-12) return Tensor::vec(k);
        for (double& x : next.data) x /= n;
        v = next;
    }
    return v;
}

}  // namespace

ProjectionResult project_trajectory(const quality::QualityParams& qp,
                                    const std::vector<Tensor>& latents) {
    if (latents.empty()) throw std::invalid_argument("project_trajectory: no latent codes");
    std::size_t k = latents.front().numel();
    for (const Tensor& z : latents)
        if (z.numel() != k) throw std::invalid_argument("project_trajectory: ragged latents");

    ProjectionResult res;

    Tensor mean_grad = Tensor::vec(k);
    for (const Tensor& z : latents) axpy(1.0, quality::grad_latent(qp, z), mean_grad);
    for (double& x : mean_grad.data) x /= static_cast<double>(latents.size());

    Tensor mean = Tensor::vec(k);
    for (const Tensor& z : latents) axpy(1.0, z, mean);
    for (double& x : mean.data) x /= static_cast<double>(latents.size());
    std::vector<Tensor> centered;
    for (const Tensor& z : latents) centered.push_back(z - mean);

    double gn = norm(mean_grad);
    if (gn >= 1e-12) {
        res.x_axis = mean_grad;
        for (double& x : res.x_axis.data) x /= gn;
    } else {
        res.grad_axis_fallback = true;
        res.x_axis = top_principal_component(centered, k);
        if (norm(res.x_axis) < 0.5) {  // fully degenerate cloud: pick a basis axis
            res.x_axis = Tensor::vec(k);
            res.x_axis[0] = 1.0;
        }
    }

    std::vector<Tensor> residual;
    for (const Tensor& c : centered) {
        Tensor r = c;
        axpy(-dot(c, res.x_axis), res.x_axis, r);
        residual.push_back(std::move(r));
    }
    res.y_axis = top_principal_component(residual, k);
    if (norm(res.y_axis) < 0.5) {
        // degenerate residuals: any unit vector orthogonal to x completes the frame
        res.y_axis = Tensor::vec(k);
        std::size_t axis = 0;
        for (std::size_t i = 1; i < k; ++i)
            if (std::abs(res.x_axis[i]) < std::abs(res.x_axis[axis])) axis = i;
        res.y_axis[axis] = 1.0;
    }
    axpy(-dot(res.y_axis, res.x_axis), res.x_axis, res.y_axis);
    double yn = norm(res.y_axis);
    if (yn > 1e-12)
        for (double& x : res.y_axis.data) x /= yn;

    for (const Tensor& z : latents)
        res.points.push_back({dot(z, res.x_axis), dot(z, res.y_axis)});
    return res;
}

void write_projection_csv(const std::filesystem::path& path, const ProjectionResult& proj,
                          const std::vector<std::string>& labels) {
    if (labels.size() != proj.points.size())
        throw std::invalid_argument("write_projection_csv: label count mismatch");
    std::string body = "label,x,y\n";
    for (std::size_t i = 0; i < proj.points.size(); ++i)
        body += labels[i] + ',' + fmt(proj.points[i][0]) + ',' + fmt(proj.points[i][1]) + '\n';
    write_atomic(path, body, "write_projection_csv");
}

std::vector<CurvePoint> quality_curves(const std::vector<steer::SteerResult>& runs) {
    std::vector<std::vector<double>> by_step;  // index 0 holds step 1
    for (const steer::SteerResult& run : runs) {
        const auto& rec = run.record;
        for (std::size_t i = 0; i < rec.step_final_slots.size(); ++i) {
            std::size_t slot = rec.step_final_slots[i];
            if (slot >= rec.pred_quality.size())
                throw std::logic_error("quality_curves: slot out of range");
            if (by_step.size() < i + 1) by_step.resize(i + 1);
            by_step[i].push_back(rec.pred_quality[slot]);
        }
    }

    std::vector<CurvePoint> out;
    for (std::size_t i = 0; i < by_step.size(); ++i) {
        const std::vector<double>& vals = by_step[i];
        if (vals.empty()) continue;
        CurvePoint pt;
        pt.step = i + 1;
        pt.n = vals.size();
        double m = 0.0;
        for (double v : vals) m += v;
        m /= static_cast<double>(vals.size());
        double var = 0.0;
        for (double v : vals) var += (v - m) * (v - m);
        var /= static_cast<double>(vals.size());
        pt.mean = m;
        pt.stdev = std::sqrt(var);
        out.push_back(pt);
    }
    return out;
}

void write_curves_csv(const std::filesystem::path& path, const std::vector<CurveGroup>& groups) {
    std::string body = "group,step,mean_pred_quality,std_pred_quality,n\n";
    for (const CurveGroup& g : groups)
        for (const CurvePoint& pt : g.points)
            body += g.label + ',' + std::to_string(pt.step) + ',' + fmt(pt.mean) + ',' +
                    fmt(pt.stdev) + ',' + std::to_string(pt.n) + '\n';
    write_atomic(path, body, "write_curves_csv");
}

}  // namespace geosteer::harness
