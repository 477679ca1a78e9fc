// mapguide: synth | features | train | decode | evaluate | ablate
#include "mapguide/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace mapguide;

namespace {

constexpr const char* kRunRootEnv = "MAPGUIDE_RUN_ROOT";

// Flag values are JSON when they parse as JSON, plain strings otherwise.
// A comma list becomes an array when the default is an array.
json parse_flag_value(const std::string& raw, const json& like) {
  if (like.is_array() && (raw.empty() || raw.front() != '[')) {
    json arr = json::array();
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) arr.push_back(parse_flag_value(item, json()));
    return arr;
  }
  if (like.is_string()) return raw;
  try {
    return json::parse(raw);
  } catch (const json::exception&) {
    return raw;
  }
}

struct SectionFlags {
  std::string section;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

// One --key flag per config field of `section`. Keys already taken by an
// earlier section on the same subcommand stay with that section.
void add_section_flags(CLI::App* app, const json& defaults, const std::string& section,
                       std::vector<SectionFlags>& out) {
  SectionFlags sf;
  sf.section = section;
  out.push_back(std::move(sf));
  auto& ref = out.back();
  for (const auto& [key, value] : defaults.at(section).items()) {
    if (app->get_option_no_throw("--" + key) != nullptr) continue;
    ref.values[key];
    ref.options[key] = app->add_option("--" + key, ref.values[key], section + "." + key + " (default " + value.dump() + ")");
  }
}

void apply_section_flags(json& cfg, const json& defaults, const std::vector<SectionFlags>& flags) {
  for (const auto& sf : flags)
    for (const auto& [key, opt] : sf.options)
      if (opt->count() > 0) cfg[sf.section][key] = parse_flag_value(sf.values.at(key), defaults.at(sf.section).at(key));
}

void apply_set(json& cfg, const json& defaults, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ValidationError("--set expects section.key=value, got '" + assignment + "'");
  const auto section = assignment.substr(0, dot);
  const auto key = assignment.substr(dot + 1, eq - dot - 1);
  const auto raw = assignment.substr(eq + 1);
  json like;
  if (defaults.contains(section) && defaults.at(section).contains(key)) like = defaults.at(section).at(key);
  cfg[section][key] = parse_flag_value(raw, like);
}

fs::path pick(const std::string& configured, const fs::path& fallback) {
  return configured.empty() ? fallback : fs::path(configured);
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ValidationError(what + " not found: " + p.string());
}

std::vector<std::int64_t> read_id_list(const fs::path& p) {
  const auto j = read_json_file(p);
  try {
    return j.get<std::vector<std::int64_t>>();
  } catch (const json::exception& e) {
    throw FormatError("voxel id list " + p.string() + ": " + e.what());
  }
}

std::string fixed(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

struct Context {
  RunConfig cfg;
  fs::path run_dir;
};

FmriSeries load_scan(const Context& c, const fs::path& path) {
  require_file(path, "fMRI manifest");
  auto f = load_fmri(path);
  if (!c.cfg.data.voxel_mask.empty()) f = f.select_voxels(read_id_list(c.cfg.data.voxel_mask));
  return f;
}

ToyLm load_lm(const Context& c) {
  const auto dir = pick(c.cfg.data.lm, c.run_dir / "lm");
  require_file(dir / "lm.json", "language model");
  return load_toy_lm(dir);
}

json cmd_synth(const Context& c) {
  const auto ex = make_experiment(c.cfg.synth, c.cfg.lm);
  const auto& d = c.run_dir;
  save_corpus(ex.corpus, d / "corpus.jsonl");
  save_toy_lm(ex.lm, d / "lm");
  save_fmri(ex.train_fmri, d / "train" / "fmri.json");
  save_timeline(ex.train_timeline, d / "train" / "timeline.jsonl");
  save_fmri(ex.test_fmri, d / "test" / "fmri.json");
  save_timeline(ex.test_timeline, d / "test" / "timeline.jsonl");
  save_embeddings(ex.test_truth, d / "test" / "truth.json");
  write_text_file(d / "auditory_voxels.json", json(ex.auditory_voxel_ids).dump() + "\n");
  return {{"train_trs", ex.train_fmri.n_trs()},
          {"test_trs", ex.test_fmri.n_trs()},
          {"voxels", ex.train_fmri.n_voxels()},
          {"test_words", ex.test_timeline.size()},
          {"lm_perplexity", perplexity(ex.lm, ex.corpus)}};
}

json cmd_features(const Context& c, bool fir) {
  const auto lm = load_lm(c);
  const auto tl_path = pick(c.cfg.data.timeline, c.run_dir / "train" / "timeline.jsonl");
  require_file(tl_path, "timeline");
  const auto grid = load_scan(c, pick(c.cfg.data.fmri, c.run_dir / "train" / "fmri.json"));
  auto e = stimulus_embeddings(lm, load_timeline(tl_path), grid, c.cfg.decode.context_window, c.cfg.decode.layer);
  if (fir) e = fir_expand(e);
  const auto out = pick(c.cfg.data.features, c.run_dir / "features.json");
  save_embeddings(e, out);
  return {{"rows", e.rows()}, {"dim", e.dim()}, {"delayed", e.delayed}, {"path", out.string()}};
}

json epoch_log_json(const TrainResult& r) {
  json log = json::array();
  for (const auto& e : r.log)
    log.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"train_mse", e.train_mse},
                   {"train_infonce", e.train_infonce},
                   {"val_mse", e.val_mse},
                   {"val_cosine", e.val_cosine}});
  return {{"epochs", log},
          {"best_epoch", r.best_epoch},
          {"best_val_mse", r.best_val_mse},
          {"best_val_cosine", r.best_val_cosine}};
}

TrainResult train_from_run(const Context& c, const MapperConfig& mc, const fs::path& out_dir) {
  const auto fmri = load_scan(c, pick(c.cfg.data.fmri, c.run_dir / "train" / "fmri.json"));
  const auto feat_path = pick(c.cfg.data.features, c.run_dir / "features.json");
  require_file(feat_path, "feature series (run `features` first)");
  const auto target = load_embeddings(feat_path);
  auto r = train_mapper(fmri, target, resolve_mapper_config(mc, fmri));
  save_checkpoint(r.checkpoint, out_dir / "checkpoint");
  write_text_file(out_dir / "train_log.json", epoch_log_json(r).dump(2) + "\n");
  return r;
}

json cmd_train(const Context& c) {
  const auto r = train_from_run(c, c.cfg.mapper, c.run_dir);
  return {{"best_epoch", r.best_epoch},
          {"best_val_mse", r.best_val_mse},
          {"best_val_cosine", r.best_val_cosine},
          {"checkpoint", (c.run_dir / "checkpoint").string()}};
}

WordRateModel word_rate_for(const Context& c) {
  if (!c.cfg.data.word_rate.empty()) {
    require_file(c.cfg.data.word_rate, "word rate model");
    return word_rate_from_json(read_json_file(c.cfg.data.word_rate));
  }
  const auto cached = c.run_dir / "word_rate.json";
  if (fs::exists(cached)) {
    const auto m = word_rate_from_json(read_json_file(cached));
    if (m.ridge_lambda == c.cfg.word_rate.ridge_lambda && m.delays == c.cfg.word_rate.delays) return m;
  }
  const auto train = load_scan(c, pick(c.cfg.data.fmri, c.run_dir / "train" / "fmri.json"));
  const auto aud_path = pick(c.cfg.data.auditory_voxels, c.run_dir / "auditory_voxels.json");
  require_file(aud_path, "auditory voxel list");
  const auto tl_path = pick(c.cfg.data.timeline, c.run_dir / "train" / "timeline.jsonl");
  require_file(tl_path, "timeline");
  const auto m = fit_word_rate(train.select_voxels(read_id_list(aud_path)), load_timeline(tl_path),
                               c.cfg.word_rate.ridge_lambda, c.cfg.word_rate.delays);
  write_text_file(cached, to_json(m).dump(2) + "\n");
  return m;
}

DecodeResult decode_from_run(const Context& c, const MapperCheckpoint& ckpt, const DecodeConfig& dc) {
  const auto lm = load_lm(c);
  const auto test = load_scan(c, pick(c.cfg.data.test_fmri, c.run_dir / "test" / "fmri.json"));
  const auto wr = word_rate_for(c);
  std::optional<EmbeddingSeries> oracle;
  if (dc.guidance == Guidance::oracle) {
    const auto p = pick(c.cfg.data.oracle, c.run_dir / "test" / "truth.json");
    require_file(p, "oracle embeddings");
    oracle = load_embeddings(p);
  }
  const Mapper mapper(ckpt);
  return decode(test, mapper, wr, lm, dc, oracle ? &*oracle : nullptr);
}

MapperCheckpoint load_run_checkpoint(const Context& c) {
  const auto dir = pick(c.cfg.data.checkpoint, c.run_dir / "checkpoint");
  require_file(dir / "config.json", "mapper checkpoint");
  return load_checkpoint(dir);
}

json cmd_decode(const Context& c) {
  const auto r = decode_from_run(c, load_run_checkpoint(c), c.cfg.decode);
  const auto out = pick(c.cfg.data.prediction, c.run_dir / "transcript.jsonl");
  save_timeline(r.transcript, out);
  write_text_file(c.run_dir / "decode_log.json", decode_log_json(r).dump(2) + "\n");
  return {{"words", r.transcript.size()}, {"guidance", to_string(c.cfg.decode.guidance)}, {"transcript", out.string()}};
}

std::vector<WordTimeline> idf_corpus(const Context& c) {
  const auto p = pick(c.cfg.data.corpus, c.run_dir / "corpus.jsonl");
  if (!fs::exists(p)) return {};
  return load_corpus(p);
}

MetricReport evaluate_from_run(const Context& c, const WordTimeline& prediction, const EvaluateConfig& ec) {
  const auto lm = load_lm(c);
  const auto ref_path = pick(c.cfg.data.reference, c.run_dir / "test" / "timeline.jsonl");
  require_file(ref_path, "reference timeline");
  return evaluate_prediction(load_timeline(ref_path), prediction, lm, idf_corpus(c), ec);
}

json cmd_evaluate(const Context& c, bool csv) {
  const auto pred_path = pick(c.cfg.data.prediction, c.run_dir / "transcript.jsonl");
  require_file(pred_path, "prediction timeline");
  const auto rep = evaluate_from_run(c, load_timeline(pred_path), c.cfg.evaluate);
  const auto j = to_json(rep);
  write_text_file(c.run_dir / "report.json", j.dump(2) + "\n");
  if (csv) write_text_file(c.run_dir / "windows.csv", windows_csv(rep));
  return j.at("metrics");
}

json cmd_ablate(const Context& c, const std::string& axis, const std::string& values_csv) {
  const json defaults = to_json(MapperConfig{});
  if (!defaults.contains(axis)) throw ValidationError("ablate: unknown mapper field '" + axis + "'");
  std::vector<std::string> values;
  {
    std::stringstream ss(values_csv);
    std::string v;
    while (std::getline(ss, v, ',')) values.push_back(v);
  }
  if (values.empty()) throw ValidationError("ablate: --values must list at least one value");
  // Validate every point before spending time on training.
  std::vector<MapperConfig> configs;
  for (const auto& v : values) {
    json mj = to_json(c.cfg.mapper);
    mj[axis] = parse_flag_value(v, defaults.at(axis));
    auto mc = mapper_config_from_json(mj);
    auto probe = mc;
    if (probe.input_voxels == 0) probe.input_voxels = 1;
    probe.validate();
    configs.push_back(mc);
  }
  const auto truth_path = pick(c.cfg.data.oracle, c.run_dir / "test" / "truth.json");
  require_file(truth_path, "test embeddings");
  const auto truth = load_embeddings(truth_path);
  const auto test = load_scan(c, pick(c.cfg.data.test_fmri, c.run_dir / "test" / "fmri.json"));
  auto ec = c.cfg.evaluate;
  ec.metrics = {Metric::bleu, Metric::meteor};
  auto dc = c.cfg.decode;
  dc.guidance = Guidance::mapper;

  json rows = json::array();
  std::ostringstream csv;
  csv << axis << ",cosine,BLEU_zs,METR_zs\n";
  std::cout << std::left << std::setw(20) << axis << std::setw(10) << "cosine" << std::setw(10) << "BLEU"
            << std::setw(10) << "METR" << "\n";
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto dir = c.run_dir / "ablate" / (axis + "=" + values[i]);
    const auto r = train_from_run(c, configs[i], dir);
    const double cos = eval_mapper(r.checkpoint, test, truth);
    const auto dec = decode_from_run(c, r.checkpoint, dc);
    save_timeline(dec.transcript, dir / "transcript.jsonl");
    const auto rep = evaluate_from_run(c, dec.transcript, ec);
    write_text_file(dir / "report.json", to_json(rep).dump(2) + "\n");
    const double bleu = rep.scores.at(Metric::bleu).sim_zs;
    const double metr = rep.scores.at(Metric::meteor).sim_zs;
    rows.push_back({{"value", values[i]}, {"cosine", cos}, {"BLEU", bleu}, {"METR", metr}});
    csv << values[i] << ',' << fixed(cos, 6) << ',' << fixed(bleu, 6) << ',' << fixed(metr, 6) << '\n';
    std::cout << std::left << std::setw(20) << values[i] << std::setw(10) << fixed(cos) << std::setw(10)
              << fixed(bleu, 2) << std::setw(10) << fixed(metr, 2) << "\n";
  }
  write_text_file(c.run_dir / ("ablation_" + axis + ".csv"), csv.str());
  json out = {{"axis", axis}, {"rows", rows}};
  write_text_file(c.run_dir / ("ablation_" + axis + ".json"), out.dump(2) + "\n");
  return out;
}

void print_error(const std::string& code, const std::string& message, const json& context) {
  std::cerr << json{{"code", code}, {"message", message}, {"context", context}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  const json defaults = to_json(RunConfig{});
  CLI::App app{"fMRI-to-text decoding: embedding mapper, guided beam search, evaluation"};
  app.require_subcommand(1);
  app.footer("Default configuration:\n" + defaults.dump(2) + "\n\nArtifacts go to $" + kRunRootEnv +
             "/<config hash> (default root: ./runs) unless --run-dir is given.");

  std::string config_path;
  std::string run_dir;
  std::vector<std::string> sets;
  bool fir = false;
  bool csv = false;
  std::string axis;
  std::string values;

  struct Sub {
    CLI::App* app;
    std::vector<std::string> sections;
    std::vector<SectionFlags> flags;
  };
  std::vector<Sub> subs;
  auto add = [&](const char* name, const char* help, std::vector<std::string> sections) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("--config", config_path, "JSON run config (sections: data, lm, mapper, word_rate, decode, evaluate, synth)");
    s->add_option("--run-dir", run_dir, "artifact directory (overrides the config-hash directory)");
    s->add_option("--set", sets, "override any field: section.key=value (repeatable)");
    sections.push_back("data");
    subs.push_back({s, sections, {}});
    for (const auto& sec : sections) add_section_flags(s, defaults, sec, subs.back().flags);
    return s;
  };
  add("synth", "generate a synthetic session, corpus and toy LM", {"synth", "lm"});
  auto* features = add("features", "LM context embeddings resampled onto the scan grid", {"decode"});
  features->add_flag("--fir", fir, "emit the FIR-delayed expansion instead");
  add("train", "train the fMRI-to-embedding mapper", {"mapper"});
  add("decode", "guided beam-search decoding of a scan", {"decode", "word_rate"});
  auto* evaluate = add("evaluate", "windowed metrics against random LM baselines", {"evaluate"});
  evaluate->add_flag("--csv", csv, "also write per-window plot data (windows.csv)");
  auto* ablate = add("ablate", "sweep one mapper field: cosine and BLEU/METR story z-scores", {"mapper"});
  ablate->add_option("--axis", axis, "mapper field to sweep (e.g. contrastive_weight, mask_ratio, tap_layer)")->required();
  ablate->add_option("--values", values, "comma-separated values")->required();

  json context = json::object();
  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      print_error("argument_error", e.what(), json::object());
      return 2;
    }

    const Sub* active = nullptr;
    for (const auto& s : subs)
      if (s.app->parsed()) active = &s;
    context["command"] = active->app->get_name();

    json cfg_json = defaults;
    if (!config_path.empty()) {
      context["config"] = config_path;
      require_file(config_path, "config file");
      const auto file = read_json_file(config_path);
      if (!file.is_object()) throw ValidationError("config file must hold a JSON object");
      for (const auto& [sec, body] : file.items()) {
        if (!body.is_object() || !defaults.contains(sec)) {
          cfg_json[sec] = body;  // rejected by the parser below
          continue;
        }
        for (const auto& [k, v] : body.items()) cfg_json[sec][k] = v;
      }
    }
    for (const auto& s : sets) apply_set(cfg_json, defaults, s);
    apply_section_flags(cfg_json, defaults, active->flags);

    Context c;
    c.cfg = run_config_from_json(cfg_json);
    validate(c.cfg);
    if (!run_dir.empty()) {
      c.run_dir = run_dir;
    } else {
      const char* root = std::getenv(kRunRootEnv);
      c.run_dir = fs::path(root != nullptr && *root != '\0' ? root : "runs") / config_hash(c.cfg);
    }
    context["run_dir"] = c.run_dir.string();
    fs::create_directories(c.run_dir);
    write_text_file(c.run_dir / "config.json", to_json(c.cfg).dump(2) + "\n");

    const auto& name = active->app->get_name();
    json result;
    if (name == "synth") result = cmd_synth(c);
    else if (name == "features") result = cmd_features(c, fir);
    else if (name == "train") result = cmd_train(c);
    else if (name == "decode") result = cmd_decode(c);
    else if (name == "evaluate") result = cmd_evaluate(c, csv);
    else if (name == "ablate") result = cmd_ablate(c, axis, values);
    if (name != "ablate") std::cout << json{{"run_dir", c.run_dir.string()}, {"result", result}}.dump(2) << std::endl;
    return 0;
  } catch (const Error& e) {
    print_error(e.kind(), e.what(), context);
    return is_validation_kind(e) ? 2 : 3;
  } catch (const json::exception& e) {
    print_error("validation_error", e.what(), context);
    return 2;
  } catch (const std::exception& e) {
    print_error("runtime_error", e.what(), context);
    return 3;
  }
}
