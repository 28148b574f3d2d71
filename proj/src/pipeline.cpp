#include "geosteer/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "geosteer/checkpoint.hpp"
#include "geosteer/corpus.hpp"
#include "geosteer/harness.hpp"
#include "geosteer/manifold.hpp"
#include "geosteer/quality.hpp"
#include "geosteer/rng.hpp"
#include "geosteer/steer.hpp"
#include "geosteer/student.hpp"

namespace geosteer::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kStageNames[kStageCount] = {
    "gen-data", "train-student", "extract-hiddens", "train-vae", "train-quality",
    "evaluate", "sweep",         "project",         "curves"};

struct Paths {
    fs::path root, dataset_dir;
    fs::path train_jsonl, val_jsonl, test_jsonl;
    fs::path student, student_history;
    fs::path hiddens, hiddens_index;
    fs::path vae, vae_history, latents_csv;
    fs::path quality, quality_history;
    fs::path eval_json, diag_csv;
    fs::path sweep_csv, sweep_summary;
    fs::path projection_csv, curves_csv;
    fs::path manifest, lock;
};

Paths layout(const Config& c) {
    Paths p;
    p.root = c.out_dir;
    p.dataset_dir = p.root / "dataset";
    p.train_jsonl = p.dataset_dir / "train.jsonl";
    p.val_jsonl = p.dataset_dir / "val.jsonl";
    p.test_jsonl = p.dataset_dir / "test.jsonl";
    p.student = p.root / "student.bin";
    p.student_history = p.root / "student_history.json";
    p.hiddens = p.root / "hiddens.bin";
    p.hiddens_index = p.root / "hiddens_index.json";
    p.vae = p.root / "vae.bin";
    p.vae_history = p.root / "vae_history.json";
    p.latents_csv = p.root / "latents.csv";
    p.quality = p.root / "quality.bin";
    p.quality_history = p.root / "quality_history.json";
    p.eval_json = p.root / "eval.json";
    p.diag_csv = p.root / "steer_diag.csv";
    p.sweep_csv = p.root / "sweep.csv";
    p.sweep_summary = p.root / "sweep_summary.json";
    p.projection_csv = p.root / "projection.csv";
    p.curves_csv = p.root / "curves.csv";
    p.manifest = p.root / "manifest.json";
    p.lock = p.root / ".lock";
    return p;
}

struct StageIo {
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
};

StageIo stage_io(Stage s, const Paths& p) {
    switch (s) {
        case Stage::gen_data:
            return {{}, {p.train_jsonl, p.val_jsonl, p.test_jsonl}};
        case Stage::train_student:
            return {{p.train_jsonl, p.val_jsonl}, {p.student, p.student_history}};
        case Stage::extract_hiddens:
            return {{p.train_jsonl, p.val_jsonl, p.student}, {p.hiddens, p.hiddens_index}};
        case Stage::train_vae:
            return {{p.hiddens, p.hiddens_index}, {p.vae, p.vae_history, p.latents_csv}};
        case Stage::train_quality:
            return {{p.hiddens, p.vae}, {p.quality, p.quality_history}};
        case Stage::evaluate:
            return {{p.test_jsonl, p.student, p.vae, p.quality}, {p.eval_json, p.diag_csv}};
        case Stage::sweep:
            return {{p.test_jsonl, p.student, p.vae, p.quality}, {p.sweep_csv, p.sweep_summary}};
        case Stage::project:
            return {{p.test_jsonl, p.student, p.vae, p.quality}, {p.projection_csv}};
        case Stage::curves:
            return {{p.test_jsonl, p.student, p.vae, p.quality}, {p.curves_csv}};
    }
    throw std::logic_error("stage_io: bad stage");
}

// stage that produces each artifact, for prerequisite error messages
const char* producer_of(const fs::path& artifact, const Paths& p) {
    for (int i = 0; i < kStageCount; ++i) {
        StageIo io = stage_io(static_cast<Stage>(i), p);
        for (const fs::path& out : io.outputs)
            if (out == artifact) return kStageNames[i];
    }
    return "unknown";
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& body) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open " + tmp.string());
        out << body;
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// exclusive-create lock file, removed on scope exit
class StageLock {
public:
    explicit StageLock(const fs::path& path) : path_(path) {
        int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0)
            throw std::runtime_error("output directory is locked by another stage (" +
                                     path.string() + ")");
        ::close(fd);
    }
    ~StageLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    StageLock(const StageLock&) = delete;
    StageLock& operator=(const StageLock&) = delete;

private:
    fs::path path_;
};

// ---- config <-> json ----

json config_to_json(const Config& c) {
    json j;
    j["out_dir"] = c.out_dir;
    j["master_seed"] = c.master_seed;
    j["n_train"] = c.n_train;
    j["n_val"] = c.n_val;
    j["n_test"] = c.n_test;
    j["min_steps"] = c.min_steps;
    j["max_steps"] = c.max_steps;
    j["embed_dim"] = c.embed_dim;
    j["hidden_dim"] = c.hidden_dim;
    j["hidden_scale"] = c.hidden_scale;
    j["student_epochs"] = c.student_epochs;
    j["student_lr"] = c.student_lr;
    j["student_batch"] = c.student_batch;
    j["max_len"] = c.max_len;
    j["student_attention"] = c.student_attention;
    j["student_train_neg"] = c.student_train_neg;
    j["latent_dim"] = c.latent_dim;
    j["vae_hidden"] = c.vae_hidden;
    j["kl_weight"] = c.kl_weight;
    j["vae_epochs"] = c.vae_epochs;
    j["vae_lr"] = c.vae_lr;
    j["vae_batch"] = c.vae_batch;
    j["quality_hidden"] = c.quality_hidden;
    j["quality_squash"] = c.quality_squash;
    j["quality_epochs"] = c.quality_epochs;
    j["quality_lr"] = c.quality_lr;
    j["quality_batch"] = c.quality_batch;
    j["beta"] = c.beta;
    j["grad_floor"] = c.grad_floor;
    j["granularity"] = c.granularity;
    j["max_updates"] = c.max_updates;
    j["beta_grid"] = c.beta_grid;
    j["project_index"] = c.project_index;
    return j;
}

int as_int(const std::string& key, const json& v) {
    if (!v.is_number_integer())
        throw ConfigError("config key '" + key + "' expects an integer");
    return v.get<int>();
}

double as_double(const std::string& key, const json& v) {
    if (!v.is_number())
        throw ConfigError("config key '" + key + "' expects a number");
    return v.get<double>();
}

bool as_bool(const std::string& key, const json& v) {
    if (!v.is_boolean())
        throw ConfigError("config key '" + key + "' expects a boolean");
    return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
    if (!v.is_string())
        throw ConfigError("config key '" + key + "' expects a string");
    return v.get<std::string>();
}

std::uint64_t as_u64(const std::string& key, const json& v) {
    if (!(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0)))
        throw ConfigError("config key '" + key + "' expects a non-negative integer");
    return v.get<std::uint64_t>();
}

std::vector<double> as_grid(const std::string& key, const json& v) {
    std::vector<double> out;
    if (v.is_array()) {
        for (const json& e : v) out.push_back(as_double(key, e));
        return out;
    }
    if (v.is_string()) {  // comma-separated, the --set friendly form
        std::stringstream ss(v.get<std::string>());
        std::string part;
        while (std::getline(ss, part, ',')) {
            try {
                std::size_t used = 0;
                double d = std::stod(part, &used);
                if (used != part.size()) throw std::invalid_argument("trailing characters");
                out.push_back(d);
            } catch (const std::exception&) {
                throw ConfigError("config key '" + key + "': cannot parse '" + part +
                                  "' as a number");
            }
        }
        return out;
    }
    throw ConfigError("config key '" + key + "' expects an array or comma-separated numbers");
}

void apply_key(Config& c, const std::string& key, const json& v) {
    if (key == "out_dir") c.out_dir = as_string(key, v);
    else if (key == "master_seed") c.master_seed = as_u64(key, v);
    else if (key == "n_train") c.n_train = as_int(key, v);
    else if (key == "n_val") c.n_val = as_int(key, v);
    else if (key == "n_test") c.n_test = as_int(key, v);
    else if (key == "min_steps") c.min_steps = as_int(key, v);
    else if (key == "max_steps") c.max_steps = as_int(key, v);
    else if (key == "embed_dim") c.embed_dim = as_int(key, v);
    else if (key == "hidden_dim") c.hidden_dim = as_int(key, v);
    else if (key == "hidden_scale") c.hidden_scale = as_double(key, v);
    else if (key == "student_epochs") c.student_epochs = as_int(key, v);
    else if (key == "student_lr") c.student_lr = as_double(key, v);
    else if (key == "student_batch") c.student_batch = as_int(key, v);
    else if (key == "max_len") c.max_len = as_int(key, v);
    else if (key == "student_attention") c.student_attention = as_bool(key, v);
    else if (key == "student_train_neg") c.student_train_neg = as_bool(key, v);
    else if (key == "latent_dim") c.latent_dim = as_int(key, v);
    else if (key == "vae_hidden") c.vae_hidden = as_int(key, v);
    else if (key == "kl_weight") c.kl_weight = as_double(key, v);
    else if (key == "vae_epochs") c.vae_epochs = as_int(key, v);
    else if (key == "vae_lr") c.vae_lr = as_double(key, v);
    else if (key == "vae_batch") c.vae_batch = as_int(key, v);
    else if (key == "quality_hidden") c.quality_hidden = as_int(key, v);
    else if (key == "quality_squash") c.quality_squash = as_bool(key, v);
    else if (key == "quality_epochs") c.quality_epochs = as_int(key, v);
    else if (key == "quality_lr") c.quality_lr = as_double(key, v);
    else if (key == "quality_batch") c.quality_batch = as_int(key, v);
    else if (key == "beta") c.beta = as_double(key, v);
    else if (key == "grad_floor") c.grad_floor = as_double(key, v);
    else if (key == "granularity") c.granularity = as_string(key, v);
    else if (key == "max_updates") c.max_updates = as_int(key, v);
    else if (key == "beta_grid") c.beta_grid = as_grid(key, v);
    else if (key == "project_index") c.project_index = as_int(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
}

steer::SteerConfig steer_config(const Config& c, double beta) {
    steer::SteerConfig s;
    s.beta = beta;
    s.grad_floor = c.grad_floor;
    s.granularity = c.granularity == "step_final" ? steer::Granularity::step_final
                                                  : steer::Granularity::every_token;
    s.max_updates = c.max_updates;
    return s;
}

// unique problems of a split, preserving first-appearance order (each problem
// carries a pos and a neg record)
std::vector<corpus::Problem> unique_problems(const std::vector<corpus::DatasetRecord>& records) {
    std::vector<corpus::Problem> out;
    for (const corpus::DatasetRecord& r : records) {
        bool seen = false;
        for (const corpus::Problem& p : out)
            if (p.id == r.problem.id) {
                seen = true;
                break;
            }
        if (!seen) out.push_back(r.problem);
    }
    return out;
}

json eval_to_json(const harness::EvalResult& res) {
    json items = json::array();
    for (const harness::EvalItem& it : res.items) {
        json j;
        j["problem_id"] = it.problem_id;
        j["exact_match"] = it.exact_match;
        j["missing_answer"] = it.missing_answer;
        j["answer"] = it.answer.has_value() ? json(*it.answer) : json(nullptr);
        j["gold"] = it.gold;
        j["oracle_quality"] = it.oracle_quality;
        j["steps_generated"] = it.steps_generated;
        items.push_back(std::move(j));
    }
    return json{{"em", res.em},
                {"mean_quality", res.mean_quality},
                {"median_hidden_norm", res.median_hidden_norm},
                {"items", std::move(items)}};
}

// ---- stage bodies ----

void do_gen_data(const Config& c, const Paths& p) {
    corpus::CorpusConfig cc;
    cc.n_train = c.n_train;
    cc.n_val = c.n_val;
    cc.n_test = c.n_test;
    cc.min_steps = c.min_steps;
    cc.max_steps = c.max_steps;
    cc.master_seed = stage_seed(c, Stage::gen_data);
    corpus::Dataset ds = corpus::build_dataset(cc);
    corpus::write_jsonl(p.train_jsonl, ds.train);
    corpus::write_jsonl(p.val_jsonl, ds.val);
    corpus::write_jsonl(p.test_jsonl, ds.test);
}

void do_train_student(const Config& c, const Paths& p) {
    auto train = corpus::read_jsonl(p.train_jsonl);
    auto val = corpus::read_jsonl(p.val_jsonl);
    student::StudentConfig sc;
    sc.embed_dim = c.embed_dim;
    sc.hidden_dim = c.hidden_dim;
    sc.hidden_scale = c.hidden_scale;
    sc.epochs = c.student_epochs;
    sc.lr = c.student_lr;
    sc.batch = c.student_batch;
    sc.max_len = c.max_len;
    sc.attention = c.student_attention;
    sc.train_neg = c.student_train_neg;
    sc.seed = stage_seed(c, Stage::train_student);
    student::TrainResult res = student::train_student(train, val, sc);
    student::save_student(p.student, res.params);
    json h{{"train_loss", res.train_loss}, {"val_loss", res.val_loss}};
    write_file_atomic(p.student_history, h.dump(2) + "\n");
}

void do_extract_hiddens(const Config& c, const Paths& p) {
    (void)c;
    student::StudentParams sp = student::load_student(p.student);
    std::size_t d = static_cast<std::size_t>(sp.hidden_dim);

    json index = json::array();
    std::vector<NamedArray> arrays;
    for (const auto& [split, file] :
         {std::pair<std::string, fs::path>{"train", p.train_jsonl}, {"val", p.val_jsonl}}) {
        auto records = corpus::read_jsonl(file);
        std::vector<Tensor> hs;
        std::vector<double> qs;
        for (const corpus::DatasetRecord& rec : records) {
            std::string rid = rec.problem.id + ":" +
                              (rec.trajectory.kind == corpus::TrajectoryKind::pos ? "pos" : "neg");
            std::vector<Tensor> trace = student::extract_prefix_hiddens(sp, rec);
            for (std::size_t t = 0; t < trace.size(); ++t) {
                index.push_back(json{{"record_id", rid},
                                     {"split", split},
                                     {"step_index", t},
                                     {"row", hs.size()}});
                hs.push_back(trace[t]);
                qs.push_back(rec.quality.scores[t]);
            }
        }
        Tensor hmat = Tensor::mat(hs.size(), d);
        for (std::size_t r = 0; r < hs.size(); ++r)
            for (std::size_t i = 0; i < d; ++i) hmat.at(r, i) = hs[r][i];
        arrays.push_back({split + ".h", std::move(hmat)});
        arrays.push_back({split + ".q", Tensor::from(std::move(qs))});
    }
    arrays.push_back({"meta", Tensor::from({static_cast<double>(d)})});
    save_checkpoint(p.hiddens, arrays);
    write_file_atomic(p.hiddens_index, index.dump() + "\n");
}

std::vector<Tensor> matrix_rows(const Tensor& m) {
    std::vector<Tensor> rows;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        Tensor v = Tensor::vec(m.cols());
        for (std::size_t i = 0; i < m.cols(); ++i) v[i] = m.at(r, i);
        rows.push_back(std::move(v));
    }
    return rows;
}

void do_train_vae(const Config& c, const Paths& p) {
    auto arrays = load_checkpoint(p.hiddens);
    std::vector<Tensor> train_h = matrix_rows(find_array(arrays, "train.h"));
    std::vector<Tensor> val_h = matrix_rows(find_array(arrays, "val.h"));

    manifold::VaeConfig vc;
    vc.input_dim = static_cast<int>(find_array(arrays, "meta")[0]);
    vc.latent_dim = c.latent_dim;
    vc.hidden_dim = c.vae_hidden;
    vc.kl_weight = c.kl_weight;
    vc.epochs = c.vae_epochs;
    vc.lr = c.vae_lr;
    vc.batch = c.vae_batch;
    vc.seed = stage_seed(c, Stage::train_vae);
    manifold::VaeTrainResult res = manifold::train_vae(train_h, val_h, vc);
    manifold::save_vae(p.vae, res.params);
    json h{{"train_total", res.train_total},
           {"train_recon", res.train_recon},
           {"train_kl", res.train_kl},
           {"val_total", res.val_total}};
    write_file_atomic(p.vae_history, h.dump(2) + "\n");

    json index = json::parse(read_file(p.hiddens_index));
    std::vector<manifold::LatentRow> rows;
    for (const json& e : index) {
        if (e.at("split").get<std::string>() != "val") continue;
        manifold::LatentRow row;
        row.record_id = e.at("record_id").get<std::string>();
        row.step_index = e.at("step_index").get<std::size_t>();
        row.mu = manifold::encode(res.params, val_h.at(e.at("row").get<std::size_t>())).mu;
        rows.push_back(std::move(row));
    }
    manifold::write_latent_csv(p.latents_csv, rows);
}

void do_train_quality(const Config& c, const Paths& p) {
    manifold::VaeParams vae = manifold::load_vae(p.vae);
    auto arrays = load_checkpoint(p.hiddens);

    auto pairs_of = [&](const std::string& split) {
        std::vector<quality::QualityPair> pairs;
        const Tensor& h = find_array(arrays, split + ".h");
        const Tensor& q = find_array(arrays, split + ".q");
        for (std::size_t r = 0; r < h.rows(); ++r) {
            Tensor v = Tensor::vec(h.cols());
            for (std::size_t i = 0; i < h.cols(); ++i) v[i] = h.at(r, i);
            pairs.push_back({manifold::encode(vae, v).mu, q[r]});
        }
        return pairs;
    };

    quality::QualityConfig qc;
    qc.latent_dim = vae.latent_dim;
    qc.hidden_dim = c.quality_hidden;
    qc.squash = c.quality_squash;
    qc.epochs = c.quality_epochs;
    qc.lr = c.quality_lr;
    qc.batch = c.quality_batch;
    qc.seed = stage_seed(c, Stage::train_quality);
    quality::QualityTrainResult res = quality::train_quality(pairs_of("train"), pairs_of("val"), qc);
    quality::save_quality(p.quality, res.params);
    json h{{"train_mse", res.train_mse}, {"val_mse", res.val_mse}};
    write_file_atomic(p.quality_history, h.dump(2) + "\n");
}

struct Trained {
    student::StudentParams sp;
    manifold::VaeParams vae;
    quality::QualityParams qp;
    std::vector<corpus::Problem> problems;
};

Trained load_trained(const Paths& p) {
    Trained t;
    t.sp = student::load_student(p.student);
    t.vae = manifold::load_vae(p.vae);
    t.qp = quality::load_quality(p.quality);
    t.problems = unique_problems(corpus::read_jsonl(p.test_jsonl));
    return t;
}

void do_evaluate(const Config& c, const Paths& p) {
    Trained t = load_trained(p);
    harness::EvalResult baseline =
        harness::evaluate(t.sp, t.vae, t.qp, t.problems, steer_config(c, 0.0), c.max_len);
    harness::EvalResult steered =
        harness::evaluate(t.sp, t.vae, t.qp, t.problems, steer_config(c, c.beta), c.max_len);

    json j{{"beta", c.beta},
           {"baseline", eval_to_json(baseline)},
           {"steered", eval_to_json(steered)}};
    write_file_atomic(p.eval_json, j.dump(2) + "\n");

    std::vector<steer::SteerDiagRow> diag;
    for (const steer::SteerResult& run : steered.runs)
        diag.insert(diag.end(), run.diag.begin(), run.diag.end());
    steer::write_diag_csv(p.diag_csv, diag);
}

void do_sweep(const Config& c, const Paths& p) {
    Trained t = load_trained(p);
    harness::SweepResult sw = harness::beta_sweep(t.sp, t.vae, t.qp, t.problems, c.beta_grid,
                                                  steer_config(c, 0.0), c.max_len);
    harness::write_sweep_csv(p.sweep_csv, sw.rows);

    json rows = json::array();
    for (const harness::SweepRow& r : sw.rows) {
        rows.push_back(json{{"beta", r.beta},
                            {"beta_over_median_norm",
                             sw.median_hidden_norm > 0 ? r.beta / sw.median_hidden_norm : 0.0},
                            {"em_baseline", r.em_baseline},
                            {"em_steered", r.em_steered},
                            {"win_steered", r.win_steered},
                            {"win_baseline", r.win_baseline},
                            {"tie", r.tie},
                            {"mcnemar_chi2", r.mcnemar_chi2},
                            {"significant", r.significant},
                            {"quality_steered", r.quality_steered},
                            {"quality_baseline", r.quality_baseline}});
    }
    json j{{"median_hidden_norm", sw.median_hidden_norm},
           {"baseline_em", sw.baseline.em},
           {"baseline_quality", sw.baseline.mean_quality},
           {"rows", std::move(rows)}};
    write_file_atomic(p.sweep_summary, j.dump(2) + "\n");
}

void do_project(const Config& c, const Paths& p) {
    Trained t = load_trained(p);
    if (c.project_index >= static_cast<int>(t.problems.size()))
        throw ConfigError("project_index " + std::to_string(c.project_index) +
                          " out of range for " + std::to_string(t.problems.size()) +
                          " test problems");
    const corpus::Problem& prob = t.problems[static_cast<std::size_t>(c.project_index)];
    std::vector<int> prompt = student::prompt_tokens(prob);

    steer::SteerResult base =
        steer::steered_generate(t.sp, t.vae, t.qp, prompt, steer_config(c, 0.0), c.max_len);
    steer::SteerResult steered =
        steer::steered_generate(t.sp, t.vae, t.qp, prompt, steer_config(c, c.beta), c.max_len);

    std::vector<Tensor> latents;
    std::vector<std::string> labels;
    for (const Tensor& z : base.record.latents) {
        latents.push_back(z);
        labels.push_back("baseline");
    }
    for (const Tensor& z : steered.record.latents) {
        latents.push_back(z);
        labels.push_back("steered");
    }
    harness::ProjectionResult proj = harness::project_trajectory(t.qp, latents);
    harness::write_projection_csv(p.projection_csv, proj, labels);
}

void do_curves(const Config& c, const Paths& p) {
    Trained t = load_trained(p);
    harness::EvalResult baseline =
        harness::evaluate(t.sp, t.vae, t.qp, t.problems, steer_config(c, 0.0), c.max_len);

    std::vector<steer::SteerResult> correct, incorrect;
    for (std::size_t i = 0; i < baseline.items.size(); ++i)
        (baseline.items[i].exact_match ? correct : incorrect)
            .push_back(std::move(baseline.runs[i]));

    std::vector<harness::CurveGroup> groups;
    groups.push_back({"correct", harness::quality_curves(correct)});
    groups.push_back({"incorrect", harness::quality_curves(incorrect)});
    harness::write_curves_csv(p.curves_csv, groups);
}

}  // namespace

Config load_config(const fs::path& file, const std::vector<std::string>& overrides) {
    Config c;
    if (!file.empty()) {
        if (!fs::exists(file)) throw ConfigError("config file not found: " + file.string());
        json j;
        try {
            j = json::parse(read_file(file));
        } catch (const std::exception& e) {
            throw ConfigError("config file " + file.string() + ": " + e.what());
        }
        if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
        for (const auto& [key, value] : j.items()) apply_key(c, key, value);
    }
    for (const std::string& kv : overrides) {
        std::size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        std::string key = kv.substr(0, eq);
        std::string raw = kv.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const std::exception&) {
            value = raw;  // unquoted strings like granularity=step_final
        }
        apply_key(c, key, value);
    }
    validate(c);
    return c;
}

void validate(const Config& c) {
    std::vector<std::string> bad;
    auto req = [&](bool ok, const std::string& msg) {
        if (!ok) bad.push_back(msg);
    };
    req(!c.out_dir.empty(), "out_dir: must be non-empty");
    req(c.n_train >= 1, "n_train: must be >= 1");
    req(c.n_val >= 1, "n_val: must be >= 1");
    req(c.n_test >= 1, "n_test: must be >= 1");
    req(c.min_steps >= 1, "min_steps: must be >= 1");
    req(c.max_steps <= 8, "max_steps: must be <= 8");
    req(c.min_steps <= c.max_steps, "min_steps: must not exceed max_steps");
    req(c.embed_dim >= 1, "embed_dim: must be >= 1");
    req(c.hidden_dim >= 1, "hidden_dim: must be >= 1");
    req(c.hidden_scale > 0.0, "hidden_scale: must be > 0");
    req(c.student_epochs >= 1, "student_epochs: must be >= 1");
    req(c.student_lr > 0.0, "student_lr: must be > 0");
    req(c.student_batch >= 1, "student_batch: must be >= 1");
    req(c.max_len >= 8, "max_len: must be >= 8");
    req(c.latent_dim >= 1, "latent_dim: must be >= 1");
    req(c.latent_dim < c.hidden_dim, "latent_dim: must be < hidden_dim");
    req(c.vae_hidden >= 1, "vae_hidden: must be >= 1");
    req(c.kl_weight >= 0.0, "kl_weight: must be >= 0");
    req(c.vae_epochs >= 1, "vae_epochs: must be >= 1");
    req(c.vae_lr > 0.0, "vae_lr: must be > 0");
    req(c.vae_batch >= 1, "vae_batch: must be >= 1");
    req(c.quality_hidden >= 1, "quality_hidden: must be >= 1");
    req(c.quality_epochs >= 1, "quality_epochs: must be >= 1");
    req(c.quality_lr > 0.0, "quality_lr: must be > 0");
    req(c.quality_batch >= 1, "quality_batch: must be >= 1");
    req(c.beta >= 0.0, "beta: must be >= 0");
    req(c.grad_floor > 0.0, "grad_floor: must be > 0");
    req(c.granularity == "every_token" || c.granularity == "step_final",
        "granularity: must be 'every_token' or 'step_final'");
    req(!c.beta_grid.empty(), "beta_grid: must be non-empty");
    for (double b : c.beta_grid)
        if (b < 0.0) {
            bad.push_back("beta_grid: entries must be >= 0");
            break;
        }
    req(c.project_index >= 0, "project_index: must be >= 0");
    req(c.project_index < c.n_test, "project_index: must be < n_test");

    if (!bad.empty()) {
        std::string msg = "invalid configuration:";
        for (const std::string& m : bad) msg += "\n  - " + m;
        throw ConfigError(msg);
    }
}

std::string canonical_json(const Config& c) { return config_to_json(c).dump(); }

std::string config_hash_hex(const Config& c) { return hex64(fnv1a64(canonical_json(c))); }

Stage parse_stage(const std::string& name) {
    for (int i = 0; i < kStageCount; ++i)
        if (name == kStageNames[i]) return static_cast<Stage>(i);
    throw ConfigError("unknown stage '" + name + "'");
}

const char* stage_name(Stage s) { return kStageNames[static_cast<int>(s)]; }

std::uint64_t stage_seed(const Config& c, Stage s) {
    return splitmix64(c.master_seed ^ fnv1a64(std::string(stage_name(s))));
}

std::string file_digest_hex(const fs::path& path) { return hex64(fnv1a64(read_file(path))); }

void run_stage(Stage s, const Config& c) {
    validate(c);
    Paths p = layout(c);
    StageIo io = stage_io(s, p);
    for (const fs::path& in : io.inputs)
        if (!fs::exists(in))
            throw PrereqError("missing " + in.string() + "; run the '" +
                              producer_of(in, p) + "' stage first");

    fs::create_directories(p.dataset_dir);
    StageLock lock(p.lock);

    auto t0 = std::chrono::steady_clock::now();
    switch (s) {
        case Stage::gen_data: do_gen_data(c, p); break;
        case Stage::train_student: do_train_student(c, p); break;
        case Stage::extract_hiddens: do_extract_hiddens(c, p); break;
        case Stage::train_vae: do_train_vae(c, p); break;
        case Stage::train_quality: do_train_quality(c, p); break;
        case Stage::evaluate: do_evaluate(c, p); break;
        case Stage::sweep: do_sweep(c, p); break;
        case Stage::project: do_project(c, p); break;
        case Stage::curves: do_curves(c, p); break;
    }
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json in_digests = json::object();
    for (const fs::path& in : io.inputs)
        in_digests[fs::relative(in, p.root).generic_string()] = file_digest_hex(in);
    json out_digests = json::object();
    for (const fs::path& out : io.outputs) {
        if (!fs::exists(out))
            throw std::logic_error("stage finished without writing " + out.string());
        out_digests[fs::relative(out, p.root).generic_string()] = file_digest_hex(out);
    }

    json manifest = json::object();
    if (fs::exists(p.manifest)) {
        try {
            manifest = json::parse(read_file(p.manifest));
        } catch (const std::exception& e) {
            throw std::runtime_error("corrupt manifest " + p.manifest.string() + ": " + e.what());
        }
    }
    manifest[stage_name(s)] = json{{"stage", stage_name(s)},
                                   {"config_hash", config_hash_hex(c)},
                                   {"input_digests", std::move(in_digests)},
                                   {"output_digests", std::move(out_digests)},
                                   {"wall_time_s", wall},
                                   {"seed", stage_seed(c, s)}};
    write_file_atomic(p.manifest, manifest.dump(2) + "\n");
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"latent-manifold steering over a trainable student model"};
    app.require_subcommand(1);
    std::string config_file;
    std::vector<std::string> sets;
    app.add_option("--config", config_file, "JSON config file (defaults used when omitted)");
    app.add_option("--set", sets, "key=value config override, repeatable");
    for (int i = 0; i < kStageCount; ++i)
        app.add_subcommand(kStageNames[i], std::string("run the ") + kStageNames[i] + " stage")
            ->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        Config c = load_config(config_file.empty() ? fs::path() : fs::path(config_file), sets);
        Stage s = parse_stage(app.get_subcommands().front()->get_name());
        run_stage(s, c);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const PrereqError& e) {
        std::cerr << "prerequisite error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace geosteer::pipeline
