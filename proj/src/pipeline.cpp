#include "sidlab/pipeline.hpp"

#include "sidlab/checkpoint.hpp"
#include "sidlab/distill.hpp"
#include "sidlab/sampler.hpp"
#include "sidlab/teacher.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace sidlab {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::mutex log_mutex;

void note(const CommandOptions& opt, const std::string& msg) {
    if (opt.quiet) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    std::cerr << "[sidlab] " << msg << std::endl;
}

// write to a sibling temp file, then rename, so readers never see partial files
void write_file(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw ConfigError("cannot write " + tmp.string());
        os << content;
        if (!os) throw ConfigError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string lines(const std::string& header, const std::vector<std::string>& rows) {
    std::string s = header + "\n";
    for (const auto& r : rows) s += r + "\n";
    return s;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

nlohmann::json versions() {
    return {{"sidlab", "0.1.0"},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
            {"compiler", __VERSION__}};
}

bool complete(const fs::path& dir) { return fs::exists(dir / "manifest.json"); }

void write_manifest(const fs::path& dir, const std::string& stage, const RunConfig& cfg, const std::string& stage_hash,
                    uint64_t seed, double wall, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json m = {{"stage", stage},
                        {"config", cfg.canonical()},
                        {"config_hash", cfg.hash()},
                        {"stage_hash", stage_hash},
                        {"seed", seed},
                        {"versions", versions()},
                        {"wall_clock_seconds", wall}};
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    write_file(dir / "manifest.json", m.dump(2) + "\n");
}

fs::path prepare_dir(const fs::path& dir) {
    fs::create_directories(dir);
    return dir;
}

RunConfig resolved(RunConfig cfg) {
    cfg.resolve();
    cfg.validate();
    return cfg;
}

// ---- probe used by the plateau rule

std::function<double(const NetParams&)> make_probe(const RunConfig& cfg) {
    return [cfg](const NetParams& theta) {
        NetDenoiser G(theta);
        SampleConfig sc = cfg.sample;
        sc.mode = "student";
        sc.K = cfg.distill.K;
        Rng rng(derive_seed(cfg.seed, "probe"));
        const int n = cfg.eval.probe_samples;
        StructureBatch shape = cfg.target.sample_shape(n, rng);
        StructureBatch x = generate(G, sc, shape, rng);
        if (cfg.target.is_chain()) {
            EvalReport rep;
            evaluate_chains(x, 1.0 / cfg.target.coord_scale, rep);
            return 1.0 - rep.designable_fraction;
        }
        Rng ref_rng(derive_seed(cfg.seed, "probe-reference"));
        return energy_distance(x.coords, cfg.target.sample_data(n, ref_rng).coords);
    };
}

// ---- sample files

void write_samples(const fs::path& dir, const RunConfig& cfg, const StructureBatch& s) {
    if (cfg.target.is_chain()) {
        fs::path sd = dir / "samples";
        fs::create_directories(sd);
        for (int b = 0; b < s.batch; ++b) {
            char name[32];
            std::snprintf(name, sizeof(name), "sample_%05d.xyz", b);
            write_xyz(sd / name, s.structure(b) / cfg.target.coord_scale);
        }
        return;
    }
    std::string out;
    for (int d = 0; d < s.dim; ++d) out += (d ? ",x" : "x") + std::to_string(d);
    if (s.labels) out += ",label";
    out += "\n";
    for (int b = 0; b < s.batch; ++b) {
        for (int d = 0; d < s.dim; ++d) out += (d ? "," : "") + fmt17(s.coords(s.row(b, 0), d));
        if (s.labels) out += "," + std::to_string((*s.labels)[static_cast<size_t>(b)]);
        out += "\n";
    }
    write_file(dir / "samples.csv", out);
}

// Chains come back in Angstrom; points in model units.
StructureBatch read_samples(const fs::path& dir, const RunConfig& cfg) {
    if (cfg.target.is_chain()) {
        std::vector<fs::path> files;
        if (fs::is_directory(dir / "samples"))
            for (const auto& e : fs::directory_iterator(dir / "samples"))
                if (e.path().extension() == ".xyz") files.push_back(e.path());
        if (files.empty()) throw ConfigError("no samples in " + (dir / "samples").string());
        std::sort(files.begin(), files.end());
        std::vector<Mat> chains;
        int max_len = 0;
        for (const auto& f : files) {
            chains.push_back(read_xyz(f));
            max_len = std::max(max_len, static_cast<int>(chains.back().rows()));
        }
        return assemble_batch(chains, max_len);
    }
    const fs::path path = dir / "samples.csv";
    if (!fs::exists(path)) throw ConfigError("no samples in " + dir.string());
    std::istringstream is(read_file(path));
    std::string line;
    std::getline(is, line);
    const bool labelled = line.find("label") != std::string::npos;
    const int D = cfg.target.dim();
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> v;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
        if (static_cast<int>(v.size()) != D + (labelled ? 1 : 0))
            throw ConfigError("malformed sample row in " + path.string());
        if (labelled) {
            labels.push_back(static_cast<int>(v.back()));
            v.pop_back();
        }
        rows.push_back(std::move(v));
    }
    if (rows.empty()) throw ConfigError("no samples in " + path.string());
    StructureBatch s = StructureBatch::zeros(std::vector<int>(rows.size(), 1), 1, D);
    for (size_t i = 0; i < rows.size(); ++i)
        for (int d = 0; d < D; ++d) s.coords(static_cast<Eigen::Index>(i), d) = rows[i][static_cast<size_t>(d)];
    if (labelled) s.labels = labels;
    return s;
}

}  // namespace

fs::path stage_dir(const RunConfig& cfg_in, const CommandOptions& opt, const std::string& stage) {
    const RunConfig cfg = resolved(cfg_in);
    const fs::path root = opt.out.empty() ? fs::path(cfg.out) : opt.out;
    std::string h;
    if (stage == "teacher")
        h = cfg.teacher_hash();
    else if (stage == "distill")
        h = cfg.distill_hash();
    else if (stage == "sample")
        h = cfg.sample_hash();
    else if (stage == "eval")
        h = eval_hash(cfg);
    else
        h = cfg.hash();
    return root / (stage + "-" + h);
}

std::string eval_hash(const RunConfig& cfg) {
    return hash_json({{"sample", cfg.sample_hash()}, {"eval", cfg.eval.to_json()}, {"seed", cfg.seed}});
}

NetParams load_teacher(const RunConfig& cfg_in, const CommandOptions& opt) {
    const RunConfig cfg = resolved(cfg_in);
    const fs::path path = stage_dir(cfg, opt, "teacher") / "teacher.ckpt";
    if (!fs::exists(path)) throw ConfigError("missing teacher checkpoint: " + path.string() + " (run train-teacher)");
    return load_checkpoint(path, cfg.teacher_hash()).params("phi");
}

NetParams load_generator(const RunConfig& cfg_in, const CommandOptions& opt) {
    const RunConfig cfg = resolved(cfg_in);
    const fs::path path = stage_dir(cfg, opt, "distill") / "generator.ckpt";
    if (!fs::exists(path)) throw ConfigError("missing generator checkpoint: " + path.string() + " (run distill)");
    return load_checkpoint(path, cfg.distill_hash()).params("theta");
}

std::unique_ptr<Denoiser> make_phi(const RunConfig& cfg, const NetParams& teacher) {
    if (cfg.teacher_mode == "analytic") {
        if (cfg.target.is_chain()) throw ConfigError("teacher_mode analytic needs a mixture target");
        return std::make_unique<AnalyticDenoiser>(cfg.target.mixture, cfg.target.conditional);
    }
    return std::make_unique<NetDenoiser>(teacher);
}

StructureBatch concat_batches(const std::vector<StructureBatch>& parts) {
    if (parts.empty()) throw UsageError("concat_batches: nothing to stack");
    StructureBatch out;
    out.max_len = parts[0].max_len;
    out.dim = parts[0].dim;
    int rows = 0;
    for (const auto& p : parts) {
        if (p.max_len != out.max_len || p.dim != out.dim) throw UsageError("concat_batches: shape mismatch");
        out.batch += p.batch;
        rows += p.rows();
    }
    out.coords.resize(rows, out.dim);
    int r = 0;
    const bool labelled = parts[0].labels.has_value();
    if (labelled) out.labels.emplace();
    for (const auto& p : parts) {
        out.coords.middleRows(r, p.rows()) = p.coords;
        r += p.rows();
        out.mask.insert(out.mask.end(), p.mask.begin(), p.mask.end());
        out.lengths.insert(out.lengths.end(), p.lengths.begin(), p.lengths.end());
        if (labelled) out.labels->insert(out.labels->end(), p.labels->begin(), p.labels->end());
    }
    return out;
}

SampleRun run_sampling(const RunConfig& cfg, const Denoiser& model) {
    SampleRun run;
    Rng rng(cfg.sample.seed);
    std::vector<StructureBatch> parts;
    for (int done = 0; done < cfg.sample.num_samples;) {
        const int n = std::min(cfg.sample.batch_size, cfg.sample.num_samples - done);
        StructureBatch shape = cfg.target.sample_shape(n, rng);
        const auto t0 = Clock::now();
        parts.push_back(generate(model, cfg.sample, shape, rng));
        run.batch_seconds.push_back(seconds_since(t0));
        run.total_seconds += run.batch_seconds.back();
        done += n;
    }
    run.samples = concat_batches(parts);
    return run;
}

EvalReport evaluate_samples(const RunConfig& cfg, const StructureBatch& samples, double seconds) {
    EvalReport rep;
    rep.run_id = cfg.sample_hash();
    rep.K = cfg.sample.mode == "student" ? cfg.sample.K : cfg.sample.teacher_steps;
    rep.gamma = cfg.sample.gamma;
    rep.alpha = cfg.distill.alpha;
    rep.seconds = seconds;
    if (cfg.target.is_chain()) {
        evaluate_chains(samples, 1.0, rep);
    } else {
        Rng ref_rng(derive_seed(cfg.seed, "reference"));
        const Mat reference = cfg.target.sample_data(cfg.eval.reference_samples, ref_rng).coords;
        Rng sw_rng(derive_seed(cfg.seed, "sliced"));
        evaluate_points(samples, reference, sw_rng, rep, cfg.eval.sw_projections);
    }
    return rep;
}

nlohmann::json report_to_json(const EvalReport& r) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json pl = nlohmann::json::array();
    for (const auto& l : r.per_length) pl.push_back({{"length", l.length}, {"count", l.count}, {"designable", l.designable}});
    return {{"run_id", r.run_id},
            {"K", r.K},
            {"gamma", r.gamma},
            {"alpha", r.alpha},
            {"samples", r.samples},
            {"energy_distance", num(r.energy_distance)},
            {"sliced_wasserstein", num(r.sliced_wasserstein)},
            {"designable_fraction", num(r.designable_fraction)},
            {"diversity_rmsd", num(r.diversity)},
            {"seconds", r.seconds},
            {"effective_time", std::isinf(r.effective_time) ? nlohmann::json("inf") : num(r.effective_time)},
            {"per_length", pl}};
}

EvalReport report_from_json(const nlohmann::json& j) {
    auto num = [&](const char* k) {
        const auto& v = j.at(k);
        if (v.is_null()) return std::nan("");
        if (v.is_string()) return std::numeric_limits<double>::infinity();
        return v.get<double>();
    };
    EvalReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.K = j.at("K").get<int>();
    r.gamma = j.at("gamma").get<double>();
    r.alpha = j.at("alpha").get<double>();
    r.samples = j.at("samples").get<int>();
    r.energy_distance = num("energy_distance");
    r.sliced_wasserstein = num("sliced_wasserstein");
    r.designable_fraction = num("designable_fraction");
    r.diversity = num("diversity_rmsd");
    r.seconds = j.at("seconds").get<double>();
    r.effective_time = num("effective_time");
    for (const auto& l : j.at("per_length"))
        r.per_length.push_back({l.at("length").get<int>(), l.at("count").get<int>(), l.at("designable").get<int>()});
    return r;
}

// ---- stages

fs::path cmd_train_teacher(const RunConfig& cfg_in, const CommandOptions& opt) {
    const RunConfig cfg = resolved(cfg_in);
    const fs::path dir = stage_dir(cfg, opt, "teacher");
    if (complete(dir) && !opt.force) {
        note(opt, "teacher: reusing " + dir.string());
        return dir;
    }
    prepare_dir(dir);
    note(opt, "teacher: training " + std::to_string(cfg.teacher.steps) + " steps -> " + dir.string());
    const auto t0 = Clock::now();

    auto save = [&](const NetParams& p, long step, const fs::path& path) {
        Checkpoint ck;
        ck.kind = "teacher";
        ck.seed = cfg.teacher.seed;
        ck.step = step;
        ck.config_hash = cfg.teacher_hash();
        ck.meta["teacher"] = cfg.teacher.to_json();
        ck.add_params("phi", p);
        save_checkpoint(ck, path);
    };
    TeacherHooks hooks;
    hooks.every = std::max(1, cfg.teacher.steps / 10);
    hooks.on_progress = [&](long step, const NetParams&) {
        note(opt, "teacher: step " + std::to_string(step) + "/" + std::to_string(cfg.teacher.steps));
    };
    hooks.on_abort = [&](long step, const NetParams& p, const std::string& why) {
        save(p, step, dir / "abort.ckpt");
        note(opt, "teacher: aborted at step " + std::to_string(step) + ": " + why);
    };
    TeacherResult res = train_teacher(cfg.teacher, hooks);
    save(res.params, res.steps_run, dir / "teacher.ckpt");

    std::vector<std::string> rows;
    for (size_t i = 0; i < res.loss_history.size(); ++i)
        rows.push_back(std::to_string(i + 1) + "," + fmt17(res.loss_history[i]));
    write_file(dir / "loss.csv", lines("step,loss", rows));

    nlohmann::json extra = {{"steps_run", res.steps_run}, {"init_loss", res.init_loss}};
    if (!cfg.target.is_chain() && !cfg.target.conditional) {
        NetDenoiser d(res.params);
        TeacherReport rep = teacher_validate(d, cfg.target.mixture);
        write_file(dir / "validation.json", rep.to_json().dump(2) + "\n");
        extra["velocity_mse"] = rep.velocity_mse;
        extra["score_mse"] = rep.score_mse;
    }
    write_manifest(dir, "teacher", cfg, cfg.teacher_hash(), cfg.teacher.seed, seconds_since(t0), extra);
    return dir;
}

fs::path cmd_distill(const RunConfig& cfg_in, const CommandOptions& opt) {
    const RunConfig cfg = resolved(cfg_in);
    const fs::path dir = stage_dir(cfg, opt, "distill");
    if (complete(dir) && !opt.force && !opt.resume) {
        note(opt, "distill: reusing " + dir.string());
        return dir;
    }
    const NetParams teacher = load_teacher(cfg, opt);
    auto phi = make_phi(cfg, teacher);
    prepare_dir(dir);
    const auto t0 = Clock::now();

    DistillState state;
    if (opt.resume) {
        state = DistillState::from_checkpoint(load_checkpoint(*opt.resume, cfg.distill_hash()));
        note(opt, "distill: resuming at iteration " + std::to_string(state.iteration));
    } else {
        state = DistillState::init(cfg.distill, teacher, teacher);
    }
    auto save_state = [&](const DistillState& s, const fs::path& path) {
        Checkpoint ck;
        ck.kind = "distill";
        ck.seed = cfg.distill.seed;
        ck.config_hash = cfg.distill_hash();
        s.to_checkpoint(ck);
        save_checkpoint(ck, path);
    };
    DistillHooks hooks;
    if (cfg.distill.eval_every > 0) hooks.probe = make_probe(cfg);
    hooks.checkpoint = [&](const DistillState& s, const std::string& reason) {
        if (reason == "periodic") {
            save_state(s, dir / "state.ckpt");
            note(opt, "distill: iteration " + std::to_string(s.iteration) + "/" + std::to_string(cfg.distill.iterations));
        } else {
            save_state(s, dir / "abort.ckpt");
            note(opt, "distill: aborted (" + reason + "), state in " + (dir / "abort.ckpt").string());
        }
    };
    note(opt, "distill: K=" + std::to_string(cfg.distill.K) + " alpha=" + fmt17(cfg.distill.alpha) + " -> " +
                  dir.string());
    distill_run(cfg.distill, *phi, cfg.target, state, hooks);

    save_state(state, dir / "state.ckpt");
    Checkpoint g;
    g.kind = "generator";
    g.seed = cfg.distill.seed;
    g.step = state.iteration;
    g.config_hash = cfg.distill_hash();
    g.add_params("theta", state.theta);
    save_checkpoint(g, dir / "generator.ckpt");
    state.trace.write_csv(dir / "trace.csv");
    write_manifest(dir, "distill", cfg, cfg.distill_hash(), cfg.distill.seed, seconds_since(t0),
                   {{"iterations_run", state.iteration}, {"plateaued", state.plateaued}});
    return dir;
}

fs::path cmd_sample(const RunConfig& cfg_in, const CommandOptions& opt) {
    const RunConfig cfg = resolved(cfg_in);
    const fs::path dir = stage_dir(cfg, opt, "sample");
    if (complete(dir) && !opt.force) {
        note(opt, "sample: reusing " + dir.string());
        return dir;
    }
    const auto t0 = Clock::now();
    NetParams params;
    std::unique_ptr<Denoiser> model;
    if (cfg.sample.mode == "student") {
        params = load_generator(cfg, opt);
        model = std::make_unique<NetDenoiser>(params);
    } else {
        params = cfg.teacher_mode == "analytic" ? NetParams{} : load_teacher(cfg, opt);
        model = make_phi(cfg, params);
    }
    if (fs::exists(dir)) fs::remove_all(dir);
    prepare_dir(dir);
    note(opt, "sample: " + std::to_string(cfg.sample.num_samples) + " samples (" + cfg.sample.mode +
                  ", K=" + std::to_string(cfg.sample.K) + ") -> " + dir.string());
    SampleRun run = run_sampling(cfg, *model);
    write_samples(dir, cfg, run.samples);

    std::vector<std::string> rows;
    for (size_t i = 0; i < run.batch_seconds.size(); ++i)
        rows.push_back(std::to_string(i) + "," + fmt17(run.batch_seconds[i]));
    write_file(dir / "timing.csv", lines("batch,seconds", rows));
    write_manifest(dir, "sample", cfg, cfg.sample_hash(), cfg.sample.seed, seconds_since(t0),
                   {{"num_samples", run.samples.batch},
                    {"batch_seconds", run.batch_seconds},
                    {"total_seconds", run.total_seconds},
                    {"per_sample_seconds", run.total_seconds / run.samples.batch}});
    return dir;
}

fs::path cmd_eval(const RunConfig& cfg_in, const CommandOptions& opt, EvalReport* report) {
    const RunConfig cfg = resolved(cfg_in);
    const fs::path dir = stage_dir(cfg, opt, "eval");
    if (complete(dir) && !opt.force && !opt.samples) {
        note(opt, "eval: reusing " + dir.string());
        if (report) *report = report_from_json(nlohmann::json::parse(read_file(dir / "report.json")));
        return dir;
    }
    const fs::path src = opt.samples ? *opt.samples : stage_dir(cfg, opt, "sample");
    if (!fs::is_directory(src)) throw ConfigError("sample directory not found: " + src.string());
    // read everything before touching the output directory
    StructureBatch samples = read_samples(src, cfg);
    double seconds = 0.0;
    if (fs::exists(src / "manifest.json"))
        seconds = nlohmann::json::parse(read_file(src / "manifest.json")).value("total_seconds", 0.0);
    const auto t0 = Clock::now();
    EvalReport rep = evaluate_samples(cfg, samples, seconds);

    prepare_dir(dir);
    write_file(dir / "metrics.csv", lines(EvalReport::csv_header(), {rep.csv_row()}));
    write_file(dir / "timing.csv", lines(EvalReport::timing_header(), {rep.timing_row()}));
    if (cfg.target.is_chain())
        write_file(dir / "per_length.csv", lines(EvalReport::per_length_header(), rep.per_length_rows()));
    write_file(dir / "report.json", report_to_json(rep).dump(2) + "\n");
    write_manifest(dir, "eval", cfg, eval_hash(cfg), cfg.seed, seconds_since(t0), {{"samples_dir", src.string()}});
    note(opt, "eval: " + rep.csv_row());
    if (report) *report = rep;
    return dir;
}

RunConfig sweep_point(const RunConfig& base, const std::string& axis, double value, int rep) {
    RunConfig c = base;
    if (axis == "gamma") {
        c.sample.gamma = value;
        c.sample_replica = rep;
    } else if (axis == "alpha") {
        c.distill.alpha = value;
        c.distill_replica = rep;
        c.sample_replica = rep;
    } else if (axis == "K") {
        const int k = static_cast<int>(std::lround(value));
        if (k < 1 || std::abs(value - k) > 1e-9) throw ConfigError("sweep: K values must be positive integers");
        c.distill.K = k;
        c.sample.K = k;
        c.distill_replica = rep;
        c.sample_replica = rep;
    } else {
        throw ConfigError("sweep: unknown axis '" + axis + "'");
    }
    c.sample.mode = "student";
    return resolved(c);
}

fs::path cmd_sweep(const RunConfig& cfg_in, const CommandOptions& opt) {
    const RunConfig cfg = resolved(cfg_in);
    const SweepSpec& sw = cfg.sweep;
    const std::vector<double> values = sw.resolved_values();
    const fs::path dir = stage_dir(cfg, opt, "sweep");
    const auto t0 = Clock::now();

    cmd_train_teacher(cfg, opt);
    // the gamma axis reuses one generator per repetition-independent distillation
    if (sw.axis == "gamma") cmd_distill(sweep_point(cfg, "gamma", values.front(), 0), opt);

    struct Point {
        double value;
        int rep;
        std::optional<EvalReport> report;
        std::string error;
    };
    std::vector<Point> points;
    for (double v : values)
        for (int r = 0; r < sw.repetitions; ++r) points.push_back({v, r, std::nullopt, ""});

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (size_t i = next++; i < points.size(); i = next++) {
            Point& p = points[i];
            try {
                RunConfig c = sweep_point(cfg, sw.axis, p.value, p.rep);
                if (sw.axis != "gamma") cmd_distill(c, opt);
                cmd_sample(c, opt);
                EvalReport rep;
                cmd_eval(c, opt, &rep);
                p.report = rep;
            } catch (const std::exception& e) {
                p.error = e.what();
                note(opt, "sweep: " + sw.axis + "=" + fmt17(p.value) + " rep " + std::to_string(p.rep) +
                              " failed: " + p.error);
            }
        }
    };
    const int workers = std::max(1, std::min<int>(opt.workers, static_cast<int>(points.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    prepare_dir(dir);
    const std::string blank_metrics = ",,,,,,,,";
    std::vector<std::string> rows, timing;
    for (const auto& p : points) {
        std::string key = sw.axis + "," + fmt17(p.value) + "," + std::to_string(p.rep) + ",";
        if (p.report) {
            rows.push_back(key + "ok," + p.report->csv_row());
            timing.push_back(key + p.report->timing_row());
        } else {
            std::string msg = p.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            rows.push_back(key + "error: " + msg + blank_metrics);
        }
    }
    write_file(dir / "sweep.csv", lines("axis,value,rep,status," + EvalReport::csv_header(), rows));
    write_file(dir / "timing.csv", lines("axis,value,rep," + EvalReport::timing_header(), timing));

    auto metric_of = [](const EvalReport& r, const std::string& m) {
        if (m == "energy_distance") return r.energy_distance;
        if (m == "sliced_wasserstein") return r.sliced_wasserstein;
        if (m == "designable_fraction") return r.designable_fraction;
        if (m == "diversity_rmsd") return r.diversity;
        if (m == "effective_time") return r.effective_time;
        if (m == "seconds") return r.seconds;
        throw ConfigError("sweep: unknown metric '" + m + "'");
    };
    nlohmann::json summary = {{"axis", sw.axis}, {"values", values}, {"repetitions", sw.repetitions}};
    int failures = 0;
    for (const auto& p : points) failures += p.report ? 0 : 1;
    summary["failed_points"] = failures;
    for (const auto& m : sw.metrics) {
        std::vector<std::string> plot;
        double best_hi = -std::numeric_limits<double>::infinity(), best_lo = std::numeric_limits<double>::infinity();
        nlohmann::json argmax = nullptr, argmin = nullptr;
        for (double v : values) {
            double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
            int n = 0;
            for (const auto& p : points) {
                if (p.value != v || !p.report) continue;
                const double x = metric_of(*p.report, m);
                if (std::isnan(x)) continue;
                sum += x;
                lo = std::min(lo, x);
                hi = std::max(hi, x);
                ++n;
            }
            if (n == 0) {
                plot.push_back(fmt17(v) + ",,,,0");
                continue;
            }
            const double mean = sum / n;
            plot.push_back(fmt17(v) + "," + fmt17(mean) + "," + fmt17(lo) + "," + fmt17(hi) + "," + std::to_string(n));
            if (mean > best_hi) best_hi = mean, argmax = v;
            if (mean < best_lo) best_lo = mean, argmin = v;
        }
        summary["metrics"][m] = {{"argmax", argmax}, {"argmin", argmin}};
        write_file(dir / ("plot_" + m + ".csv"), lines(sw.axis + ",mean,min,max,n", plot));
    }
    write_file(dir / "summary.json", summary.dump(2) + "\n");
    write_manifest(dir, "sweep", cfg, cfg.hash(), cfg.seed, seconds_since(t0), {{"workers", workers}});
    return dir;
}

nlohmann::json GradCheckSummary::to_json() const {
    nlohmann::json j = {{"passed", passed}, {"checks", nlohmann::json::array()}};
    for (const auto& [name, r] : reports)
        j["checks"].push_back({{"network", name},
                               {"passed", r.passed},
                               {"max_rel_error", r.max_rel_error},
                               {"tolerance", r.tolerance},
                               {"worst_tensor", r.worst_tensor},
                               {"worst_coordinate", r.worst_coordinate},
                               {"analytic", r.analytic},
                               {"numeric", r.numeric},
                               {"checked", r.checked}});
    return j;
}

GradCheckSummary cmd_gradcheck(const RunConfig& cfg_in, const CommandOptions& opt) {
    const RunConfig cfg = resolved(cfg_in);
    GradCheckOptions go;
    go.seed = cfg.seed;
    if (opt.corrupt_gradient) {
        go.corrupt_tensor = 0;
        go.corrupt_by = 0.05;
    }
    GradCheckSummary s;
    auto record = [&](const std::string& name, const GradReport& r) {
        s.passed = s.passed && r.passed;
        note(opt, "gradcheck: " + name + " max_rel_error=" + fmt17(r.max_rel_error) + (r.passed ? " ok" : " FAIL"));
        s.reports.push_back({name, r});
    };
    {
        // y = X W^T with a quadratic readout
        Rng rng(go.seed + 3);
        NetParams lin;
        lin.names = {"W"};
        lin.tensors = {rng.normal(3, 4)};
        lin.trainable = {true};
        const Mat X = rng.normal(6, 4), c = rng.normal(6, 3);
        LossProgram loss = [&](Tape& tape, const NetParams& p, bool trainable) {
            Var y = ops::linear(tape, tape.constant(X), tape.param(p, 0, trainable));
            return ops::scale(tape, ops::weighted_sq_norm(tape, ops::sub(tape, y, tape.constant(c)), Vec::Ones(6)),
                              0.5);
        };
        record("linear", check_gradients(loss, lin, 1e-8, go));
    }
    std::vector<std::pair<std::string, ArchSpec>> archs;
    archs.push_back({"configured", cfg.teacher.arch});
    ArchSpec point;
    archs.push_back({"point", point});
    ArchSpec chain;
    chain.dim = 3;
    chain.window = 2;
    chain.context = true;
    chain.position = true;
    archs.push_back({"chain", chain});
    ArchSpec labelled;
    labelled.num_labels = 8;
    archs.push_back({"conditional", labelled});

    for (const auto& [name, arch] : archs) record(name, gradient_check(arch, 1e-4, go));
    const fs::path dir = prepare_dir(stage_dir(cfg, opt, "gradcheck"));
    write_file(dir / "report.json", s.to_json().dump(2) + "\n");
    return s;
}

}  // namespace sidlab
