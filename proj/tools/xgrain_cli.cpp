// Command-line surface for the multi-grained similarity engine: corpus
// ingestion, pair scoring, retrieval evaluation, aggregator ablations,
// temperature sweeps, synthetic data generation, toy training and
// gradient checking.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xgrain/aggregate.hpp"
#include "xgrain/eval.hpp"
#include "xgrain/model.hpp"
#include "xgrain/objective.hpp"
#include "xgrain/store.hpp"
#include "xgrain/synth.hpp"
#include "xgrain/train.hpp"

using json = nlohmann::json;
using namespace xgrain;

namespace {

struct CommonOpts {
  std::string video_corpus;
  std::string text_corpus;
  std::string pairs;
  std::string agg = "attention";
  double tau = 0.01;
  std::string toggles = "vs,vw,fs,fw";
  double scale = 100.0;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0 = XGRAIN_THREADS or 1
  bool as_json = false;
  std::string out;
};

unsigned resolve_threads(unsigned flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("XGRAIN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return 1;
}

ContrastToggles parse_toggles(const std::string& spec) {
  ContrastToggles t{false, false, false, false};
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = spec.find(',', start);
    const std::string tok = spec.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    if (tok == "vs") t.use_vs = true;
    else if (tok == "vw") t.use_vw = true;
    else if (tok == "fs") t.use_fs = true;
    else if (tok == "fw") t.use_fw = true;
    else if (!tok.empty())
      throw ParamError("unknown toggle '" + tok + "' (expected vs,vw,fs,fw)");
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (t.enabled_count() == 0)
    throw ParamError("at least one contrast toggle must be enabled");
  return t;
}

struct LoadedData {
  Corpus videos;
  Corpus texts;
  PairList pairs;
  std::vector<VideoFeatures> vfeats;  // pair order
  std::vector<TextFeatures> tfeats;
};

LoadedData load_for_scoring(const CommonOpts& opt) {
  LoadedData d;
  d.videos = read_corpus(opt.video_corpus);
  d.texts = read_corpus(opt.text_corpus);
  if (d.videos.dim != d.texts.dim)
    throw ShapeError("video dim " + std::to_string(d.videos.dim) +
                     " != text dim " + std::to_string(d.texts.dim));
  if (!opt.pairs.empty()) {
    d.pairs = read_pairs(opt.pairs);
  } else {
    for (std::size_t k = 0;
         k < std::min(d.videos.items.size(), d.texts.items.size()); ++k)
      d.pairs.pairs.emplace_back(d.videos.items[k].id, d.texts.items[k].id);
  }
  for (const auto& [vid, tid] : d.pairs.pairs) {
    d.vfeats.push_back(video_features_from_tokens(d.videos.by_id(vid)));
    d.tfeats.push_back(text_features_from_tokens(d.texts.by_id(tid)));
  }
  return d;
}

void write_or_print(const std::string& out, const std::string& payload) {
  if (out.empty()) {
    std::cout << payload << "\n";
  } else {
    std::ofstream os(out, std::ios::trunc);
    if (!os) throw IoError("cannot open output '" + out + "'");
    os << payload << "\n";
  }
}

json metrics_to_json(const RetrievalMetrics& m, const char* direction) {
  return json{{"direction", direction}, {"r1", m.r_at.at(1)},
              {"r5", m.r_at.at(5)},     {"r10", m.r_at.at(10)},
              {"mdr", m.mdr},           {"mnr", m.mnr},
              {"n_queries", m.n_queries}};
}

void print_metrics_row(const std::string& label, const RetrievalMetrics& t2v,
                       const RetrievalMetrics& v2t) {
  std::printf("%-12s  t2v R@1 %5.1f R@5 %5.1f MnR %6.1f | "
              "v2t R@1 %5.1f R@5 %5.1f MnR %6.1f\n",
              label.c_str(), t2v.r_at.at(1), t2v.r_at.at(5), t2v.mnr,
              v2t.r_at.at(1), v2t.r_at.at(5), v2t.mnr);
}

int cmd_ingest(const CommonOpts& opt) {
  json report = json::array();
  const std::pair<std::string, std::string> sources[] = {
      {"video", opt.video_corpus}, {"text", opt.text_corpus}};
  for (const auto& [label, path] : sources) {
    if (path.empty()) continue;
    Corpus c = read_corpus(path);
    std::size_t tokens = 0;
    for (const auto& it : c.items) tokens += it.tokens.rows;
    report.push_back({{"corpus", label},
                      {"path", path},
                      {"dim", c.dim},
                      {"items", c.items.size()},
                      {"tokens", tokens}});
    if (!opt.out.empty()) write_corpus(c, opt.out);
  }
  if (report.empty()) throw ParamError("ingest: no corpus given");
  if (opt.as_json) {
    std::cout << report.dump(2) << "\n";
  } else {
    for (const auto& r : report)
      std::printf("%s corpus ok: %zu items, dim %zu (%s)\n",
                  r["corpus"].get<std::string>().c_str(),
                  r["items"].get<std::size_t>(), r["dim"].get<std::size_t>(),
                  r["path"].get<std::string>().c_str());
  }
  return 0;
}

int cmd_score(const CommonOpts& opt, bool full_matrix) {
  LoadedData d = load_for_scoring(opt);
  AggregationConfig cfg{parse_agg_method(opt.agg), opt.tau};
  ContrastToggles toggles = parse_toggles(opt.toggles);
  Matrix scores = score_matrix(d.vfeats, d.tfeats, cfg, toggles, opt.scale,
                               resolve_threads(opt.threads));
  json out;
  out["agg"] = opt.agg;
  out["tau"] = opt.tau;
  out["scale"] = opt.scale;
  json pair_scores = json::array();
  for (std::size_t k = 0; k < d.pairs.pairs.size(); ++k)
    pair_scores.push_back({{"video_id", d.pairs.pairs[k].first},
                           {"text_id", d.pairs.pairs[k].second},
                           {"score", scores.at(k, k)}});
  out["pairs"] = pair_scores;
  if (full_matrix) {
    json rows = json::array();
    for (std::size_t i = 0; i < scores.rows; ++i)
      rows.push_back(std::vector<double>(scores.row(i),
                                         scores.row(i) + scores.cols));
    out["matrix"] = rows;
  }
  if (opt.as_json || !opt.out.empty() || full_matrix) {
    write_or_print(opt.out, out.dump(2));
  } else {
    for (const auto& p : out["pairs"])
      std::printf("%s\t%s\t%.6f\n", p["video_id"].get<std::string>().c_str(),
                  p["text_id"].get<std::string>().c_str(),
                  p["score"].get<double>());
  }
  return 0;
}

int cmd_eval(const std::string& matrix_path, bool as_json,
             const std::string& out) {
  std::ifstream is(matrix_path);
  if (!is) throw IoError("cannot open '" + matrix_path + "'");
  json doc = json::parse(is, nullptr, true);
  if (!doc.contains("matrix"))
    throw FormatError("eval: no \"matrix\" key in '" + matrix_path + "'");
  const auto& rows = doc["matrix"];
  Matrix scores(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < scores.rows; ++i)
    for (std::size_t j = 0; j < scores.cols; ++j)
      scores.at(i, j) = rows[i][j].get<double>();
  auto t2v = evaluate(scores, Direction::T2V);
  auto v2t = evaluate(scores, Direction::V2T);
  if (as_json || !out.empty()) {
    json rep = json::array(
        {metrics_to_json(t2v, "t2v"), metrics_to_json(v2t, "v2t")});
    write_or_print(out, rep.dump(2));
  } else {
    print_metrics_row("metrics", t2v, v2t);
  }
  return 0;
}

int cmd_ablate(const CommonOpts& opt) {
  LoadedData d = load_for_scoring(opt);
  ContrastToggles toggles = parse_toggles(opt.toggles);
  json rows = json::array();
  for (auto method : {AggMethod::MaxMax, AggMethod::MeanMean,
                      AggMethod::MeanMax, AggMethod::MaxMean,
                      AggMethod::Attention}) {
    AggregationConfig cfg{method, opt.tau};
    Matrix scores = score_matrix(d.vfeats, d.tfeats, cfg, toggles, opt.scale,
                                 resolve_threads(opt.threads));
    auto t2v = evaluate(scores, Direction::T2V);
    auto v2t = evaluate(scores, Direction::V2T);
    if (!opt.as_json) print_metrics_row(agg_method_name(method), t2v, v2t);
    rows.push_back({{"method", agg_method_name(method)},
                    {"t2v", metrics_to_json(t2v, "t2v")},
                    {"v2t", metrics_to_json(v2t, "v2t")}});
  }
  if (opt.as_json || !opt.out.empty())
    write_or_print(opt.out, rows.dump(2));
  return 0;
}

int cmd_sweep_tau(const CommonOpts& opt, std::vector<double> taus) {
  if (taus.empty()) taus = {1.0, 0.1, 0.01, 0.001};
  for (double t : taus)
    if (!(t > 0)) throw CLI::ValidationError("--taus", "tau must be > 0");
  LoadedData d = load_for_scoring(opt);
  ContrastToggles toggles = parse_toggles(opt.toggles);
  json rows = json::array();
  for (double tau : taus) {
    AggregationConfig cfg{AggMethod::Attention, tau};
    Matrix scores = score_matrix(d.vfeats, d.tfeats, cfg, toggles, opt.scale,
                                 resolve_threads(opt.threads));
    auto t2v = evaluate(scores, Direction::T2V);
    auto v2t = evaluate(scores, Direction::V2T);
    char label[32];
    std::snprintf(label, sizeof label, "tau=%g", tau);
    if (!opt.as_json) print_metrics_row(label, t2v, v2t);
    rows.push_back({{"tau", tau},
                    {"t2v", metrics_to_json(t2v, "t2v")},
                    {"v2t", metrics_to_json(v2t, "v2t")}});
  }
  if (opt.as_json || !opt.out.empty())
    write_or_print(opt.out, rows.dump(2));
  return 0;
}

int cmd_gen_synth(const SynthConfig& cfg, const std::string& out_prefix) {
  SynthDataset ds = generate(cfg);
  write_corpus(ds.videos, out_prefix + ".videos.xgeb");
  write_corpus(ds.texts, out_prefix + ".texts.xgeb");
  write_pairs(ds.pairs, out_prefix + ".pairs.tsv");
  json masks = json::array();
  for (const auto& m : ds.masks)
    masks.push_back({{"pair_id", m.pair_id},
                     {"relevant_frames", m.relevant_frames},
                     {"relevant_words", m.relevant_words}});
  std::ofstream os(out_prefix + ".masks.json", std::ios::trunc);
  if (!os) throw IoError("cannot open '" + out_prefix + ".masks.json'");
  os << masks.dump(2) << "\n";
  std::cout << "wrote " << out_prefix << ".{videos,texts}.xgeb, .pairs.tsv, "
            << ".masks.json (" << cfg.num_pairs << " pairs, dim " << cfg.dim
            << ")\n";
  return 0;
}

int cmd_train_toy(const CommonOpts& opt, std::size_t epochs, double lr_encoder,
                  double lr_heads, std::size_t batch_size,
                  std::size_t enc_layers, std::size_t enc_heads,
                  std::size_t max_frames, const std::string& out_checkpoint) {
  Corpus videos = read_corpus(opt.video_corpus);
  Corpus texts = read_corpus(opt.text_corpus);
  PairList pairs = opt.pairs.empty() ? PairList{} : read_pairs(opt.pairs);
  if (pairs.pairs.empty())
    for (std::size_t k = 0;
         k < std::min(videos.items.size(), texts.items.size()); ++k)
      pairs.pairs.emplace_back(videos.items[k].id, texts.items[k].id);

  std::size_t frames_cap = max_frames;
  for (const auto& it : videos.items)
    frames_cap = std::max(frames_cap, it.tokens.rows);

  Rng rng(opt.seed);
  RetrievalModel model =
      init_model(videos.dim, enc_layers, enc_heads, frames_cap, rng);
  model.logit_scale = opt.scale;

  TrainOptions topt;
  topt.epochs = epochs;
  topt.lr_encoder = lr_encoder;
  topt.lr_heads = lr_heads;
  topt.batch_size = batch_size;
  topt.seed = opt.seed;
  topt.agg = {parse_agg_method(opt.agg), opt.tau};
  topt.toggles = parse_toggles(opt.toggles);

  TrainResult result = train_toy(model, videos, texts, pairs, topt);
  for (const auto& log : result.logs) {
    json line{{"epoch", log.epoch},   {"loss", log.loss},
              {"l_v2t", log.l_v2t},   {"l_t2v", log.l_t2v},
              {"val_r1", log.val_r1}, {"lr", log.lr}};
    std::cout << line.dump() << "\n";
  }
  if (!out_checkpoint.empty()) {
    std::vector<TensorRef> extra = {
        {"proj_v.w", {model.proj_v_w.rows, model.proj_v_w.cols},
         model.proj_v_w.data.data(), model.proj_v_w.size()},
        {"proj_v.b", {model.proj_v_b.len()}, model.proj_v_b.data.data(),
         model.proj_v_b.len()},
        {"proj_t.w", {model.proj_t_w.rows, model.proj_t_w.cols},
         model.proj_t_w.data.data(), model.proj_t_w.size()},
        {"proj_t.b", {model.proj_t_b.len()}, model.proj_t_b.data.data(),
         model.proj_t_b.len()},
        {"logit_scale", {1}, &model.logit_scale, 1}};
    write_checkpoint(model.encoder, extra, out_checkpoint);
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double corrupt, bool as_json) {
  Rng rng(seed);
  auto model = init_model(8, 2, 2, 12, rng);
  model.logit_scale = 5.0;
  auto batch = random_toy_batch(4, 3, 4, 8, rng);
  AggregationConfig cfg{AggMethod::Attention, 0.1};
  auto report = grad_check(model, batch, cfg, {}, 1e-3, corrupt);
  json groups = json::array();
  for (const auto& g : report.groups) {
    if (!as_json)
      std::printf("%-16s max relative error %.3e\n", g.name.c_str(),
                  g.max_rel);
    groups.push_back({{"group", g.name}, {"max_rel", g.max_rel}});
  }
  if (as_json)
    std::cout << json{{"groups", groups},
                      {"max_rel", report.max_rel},
                      {"pass", report.pass(1e-4)}}
                     .dump(2)
              << "\n";
  else
    std::printf("overall max relative error %.3e -> %s\n", report.max_rel,
                report.pass(1e-4) ? "pass" : "FAIL");
  if (!report.pass(1e-4)) {
    for (const auto& g : report.groups)
      if (g.max_rel > 1e-4)
        std::fprintf(stderr, "gradcheck failed in group %s (%.3e)\n",
                     g.name.c_str(), g.max_rel);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xgrain: multi-grained video-text similarity engine"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file overriding flags");

  CommonOpts opt;
  auto add_common = [&](CLI::App* sub, bool needs_corpora) {
    auto* vc = sub->add_option("--video-corpus", opt.video_corpus,
                               "video corpus path");
    auto* tc =
        sub->add_option("--text-corpus", opt.text_corpus, "text corpus path");
    if (needs_corpora) {
      vc->required();
      tc->required();
    }
    sub->add_option("--pairs", opt.pairs,
                    "pair list path (default: positional pairing)");
    sub->add_option("--agg", opt.agg,
                    "aggregator: attention|mean_mean|mean_max|max_mean|max_max");
    sub->add_option("--tau", opt.tau, "softmax temperature")
        ->check(CLI::PositiveNumber);
    sub->add_option("--toggles", opt.toggles,
                    "enabled contrasts, subset of vs,vw,fs,fw");
    sub->add_option("--scale", opt.scale, "logit scale before InfoNCE/ranking");
    sub->add_option("--seed", opt.seed, "RNG seed");
    sub->add_option("--threads", opt.threads,
                    "worker threads (env XGRAIN_THREADS as fallback)");
    sub->add_flag("--json", opt.as_json, "machine-readable JSON output");
    sub->add_option("--out", opt.out, "output file (default stdout)");
  };

  auto* ingest = app.add_subcommand("ingest", "validate/convert corpora");
  add_common(ingest, false);

  bool full_matrix = false;
  auto* score = app.add_subcommand("score", "score video-text pairs");
  add_common(score, true);
  score->add_flag("--matrix", full_matrix, "emit the full BxB score matrix");

  std::string matrix_path;
  auto* eval = app.add_subcommand("eval", "metrics from a score-matrix file");
  eval->add_option("--matrix-file", matrix_path,
                   "JSON file with a \"matrix\" key (see score --matrix)")
      ->required();
  eval->add_flag("--json", opt.as_json, "machine-readable JSON output");
  eval->add_option("--out", opt.out, "output file (default stdout)");

  auto* ablate =
      app.add_subcommand("ablate-agg", "compare all five aggregators");
  add_common(ablate, true);

  std::vector<double> taus;
  auto* sweep = app.add_subcommand("sweep-tau", "attention temperature sweep");
  add_common(sweep, true);
  sweep->add_option("--taus", taus, "temperatures (default 1 0.1 0.01 0.001)");

  SynthConfig synth_cfg;
  std::string out_prefix = "synth";
  auto* gen = app.add_subcommand("gen-synth", "generate a planted corpus");
  gen->add_option("--pairs", synth_cfg.num_pairs, "number of pairs");
  gen->add_option("--dim", synth_cfg.dim, "embedding dim");
  gen->add_option("--frames", synth_cfg.frames_per_video, "frames per video");
  gen->add_option("--words", synth_cfg.words_per_text, "words per text");
  gen->add_option("--relevant-frac", synth_cfg.relevant_frac,
                  "fraction of relevant tokens, in (0,1]");
  gen->add_option("--noise-sigma", synth_cfg.noise_sigma,
                  "gaussian perturbation of relevant tokens");
  gen->add_option("--seed", synth_cfg.seed, "RNG seed");
  gen->add_option("--out-prefix", out_prefix, "output path prefix");

  std::size_t epochs = 30, batch_size = 16, enc_layers = 3, enc_heads = 2,
              max_frames = 12;
  double lr_encoder = 1e-4, lr_heads = 1e-3;
  std::string out_checkpoint;
  auto* train = app.add_subcommand("train-toy", "train the toy model");
  add_common(train, true);
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--lr-encoder", lr_encoder, "encoder learning rate");
  train->add_option("--lr-heads", lr_heads, "projection-head learning rate");
  train->add_option("--batch-size", batch_size, "batch size");
  train->add_option("--layers", enc_layers, "temporal encoder layers");
  train->add_option("--heads", enc_heads, "attention heads");
  train->add_option("--max-frames", max_frames, "position embedding capacity");
  train->add_option("--out-checkpoint", out_checkpoint,
                    "write trained parameters here");

  double corrupt = 0.0;
  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seed", opt.seed, "RNG seed");
  gradcheck->add_flag("--json", opt.as_json, "machine-readable JSON output");
  gradcheck
      ->add_option("--corrupt", corrupt,
                   "offset added to one analytic gradient (negative control)")
      ->group("");  // hidden test hook

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ingest) return cmd_ingest(opt);
    if (*score) return cmd_score(opt, full_matrix);
    if (*eval) return cmd_eval(matrix_path, opt.as_json, opt.out);
    if (*ablate) return cmd_ablate(opt);
    if (*sweep) return cmd_sweep_tau(opt, taus);
    if (*gen) return cmd_gen_synth(synth_cfg, out_prefix);
    if (*train)
      return cmd_train_toy(opt, epochs, lr_encoder, lr_heads, batch_size,
                           enc_layers, enc_heads, max_frames, out_checkpoint);
    if (*gradcheck) return cmd_gradcheck(opt.seed, corrupt, opt.as_json);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
