// cfu: batch front end for ingestion, post-processing, evaluation, search,
// quantification export, synthetic data and the HTTP service.

#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cfu/api.hpp"
#include "cfu/error.hpp"
#include "cfu/interchange.hpp"
#include "cfu/param_search.hpp"
#include "cfu/parallel.hpp"
#include "cfu/report.hpp"
#include "cfu/settings.hpp"
#include "cfu/store.hpp"
#include "cfu/synthbench.hpp"
#include "cfu/workflow.hpp"

namespace fs = std::filesystem;
using namespace cfu;

namespace {

// A directory argument means its dataset.json.
fs::path dataset_file(const std::string& arg) {
  const fs::path p(arg);
  return fs::is_directory(p) ? p / "dataset.json" : p;
}

Dataset read_dataset(const std::string& arg) {
  if (arg == "-") {
    std::string text((std::istreambuf_iterator<char>(std::cin)), std::istreambuf_iterator<char>());
    return interchange::parse_dataset(text);
  }
  return interchange::load_dataset(dataset_file(arg));
}

fs::path image_root_of(const std::string& arg) {
  if (arg == "-") return fs::current_path();
  return dataset_file(arg).parent_path();
}

void write_text(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error(fmt::format("cannot write '{}'", out));
  f << text;
}

// Output for a dataset: "-" is stdout, a path ending in .json is a file,
// anything else a directory receiving dataset.json.
void write_dataset(const std::string& out, const Dataset& d) {
  if (out == "-") {
    std::cout << interchange::dump_dataset(d);
    return;
  }
  const fs::path p(out);
  interchange::save_dataset(d, p.extension() == ".json" ? p : p / "dataset.json");
}

report::Format format_of(const std::string& s) {
  auto f = report::parse_format(s);
  if (!f) throw InvalidArgument(fmt::format("unknown format '{}'", s));
  return *f;
}

std::vector<Split> splits_of(const std::vector<std::string>& names) {
  std::vector<Split> out;
  for (const auto& n : names) {
    auto s = parse_split(n);
    if (!s) throw InvalidArgument(fmt::format("unknown split '{}'", n));
    out.push_back(*s);
  }
  return out;
}

void apply_updates(Dataset& d, const std::vector<store::FlagUpdate>& updates) {
  for (const auto& u : updates) {
    Instance* inst = d.find_prediction(u.id);
    inst->excluded = u.excluded;
    inst->unsure = u.unsure;
    inst->alt_label = u.alt_label;
  }
}

postproc::PostProcConfig load_config(const std::string& config, const std::vector<std::string>& sets) {
  KeyValues kv;
  if (config != "default") kv = read_key_values(config);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw InvalidArgument(fmt::format("--set expects key=value, got '{}'", s));
    auto trim = [](std::string v) {
      v.erase(0, v.find_first_not_of(" \t"));
      v.erase(v.find_last_not_of(" \t") + 1);
      return v;
    };
    kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
  return postproc::config_from_key_values(kv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Colony-forming unit counting back end"};
  app.require_subcommand(1);
  int jobs = 0;
  app.add_option("--jobs", jobs, "Worker threads for per-image parallelism (0: default)")->check(CLI::NonNegativeNumber);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate and merge interchange files into one canonical document");
  std::string ingest_gt, ingest_pred, ingest_images, ingest_out = "-", ingest_store;
  ingest->add_option("--gt", ingest_gt, "Interchange file with images (and ground truth)")->required();
  ingest->add_option("--pred", ingest_pred, "Interchange file with model predictions");
  ingest->add_option("--images", ingest_images, "Root for pixel_data_ref when fitting missing dish ellipses");
  ingest->add_option("--out", ingest_out, "Output file, directory or - for stdout");
  ingest->add_option("--store", ingest_store, "Also persist into this store directory and print the dataset id");

  // postprocess
  auto* post = app.add_subcommand("postprocess", "Run the four exclusion stages");
  std::string post_config = "default", post_in, post_out, post_format = "table";
  std::vector<std::string> post_sets;
  post->add_option("--config", post_config, "'default' or a key = value file");
  post->add_option("--set", post_sets, "Override one key, e.g. --set score_threshold=0.8");
  post->add_option("--in", post_in, "Dataset file or directory (- for stdin)")->required();
  post->add_option("--out", post_out, "Output file or directory (- for stdout)")->required();
  post->add_option("--format", post_format, "Summary format: table or json");

  // evaluate
  auto* evalc = app.add_subcommand("evaluate", "Benchmark predictions against ground truth");
  std::string eval_pred, eval_gt, eval_format = "table", eval_out;
  std::vector<std::string> eval_splits, eval_raters;
  std::vector<double> eval_iou;
  double eval_confusion_iou = 0.5;
  bool eval_pooled = false;
  evalc->add_option("--pred", eval_pred, "Dataset holding the predictions")->required();
  evalc->add_option("--gt", eval_gt, "Dataset holding the ground truth")->required();
  evalc->add_option("--format", eval_format, "table or json");
  evalc->add_option("--splits", eval_splits, "Restrict to these splits")->delimiter(',');
  evalc->add_option("--iou-thresholds", eval_iou, "AP thresholds")->delimiter(',');
  evalc->add_option("--confusion-iou", eval_confusion_iou, "Matching IoU for the confusion matrix");
  evalc->add_flag("--pooled", eval_pooled, "Pool counts across images for MAPE");
  evalc->add_option("--rater", eval_raters,
                    "Variability rater name:kind:source:path, kind user|model, source ground_truth|predictions");
  evalc->add_option("--out", eval_out, "Report file (default stdout)");

  // search
  auto* searchc = app.add_subcommand("search", "Grid search over post-processing thresholds");
  std::string search_in, search_space, search_out, search_base = "default";
  std::vector<std::string> search_splits{"train", "val"};
  searchc->add_option("--in", search_in, "Dataset with ground truth and predictions")->required();
  searchc->add_option("--space", search_space, "key = comma list file; missing keys keep default grids");
  searchc->add_option("--splits", search_splits, "Splits scored by the objective")->delimiter(',');
  searchc->add_option("--base", search_base, "'default' or key = value file for the non-searched fields");
  searchc->add_option("--out", search_out, "Write the full table here instead of stdout");

  // export
  auto* exportc = app.add_subcommand("export", "Quantification export of one experiment");
  std::string export_in, export_experiment, export_out;
  double export_confidence = 0.95;
  exportc->add_option("--in", export_in, "Dataset with experiments and predictions")->required();
  exportc->add_option("--experiment", export_experiment, "Experiment id")->required();
  exportc->add_option("--confidence", export_confidence, "Confidence level")->check(CLI::Range(0.5, 0.9999));
  exportc->add_option("--out", export_out, "Output file (default stdout)");

  // synth
  auto* synthc = app.add_subcommand("synth", "Generate a synthetic dish dataset");
  std::uint64_t synth_seed = 0;
  std::string synth_out, synth_preset = "planted";
  int synth_images = 1;
  synth::SynthConfig scfg;
  bool synth_near = false;
  synthc->add_option("--seed", synth_seed, "Random seed");
  synthc->add_option("--out", synth_out, "Output directory")->required();
  synthc->add_option("--preset", synth_preset, "planted, identity or search")
      ->check(CLI::IsMember({"planted", "identity", "search"}));
  synthc->add_option("--images", synth_images, "Number of images")->check(CLI::PositiveNumber);
  synthc->add_option("--colonies", scfg.n_colonies, "Colonies per image");
  synthc->add_option("--width", scfg.width, "Image width");
  synthc->add_option("--height", scfg.height, "Image height");
  synthc->add_flag("--near-threshold", synth_near, "Plant violations just past the default thresholds");
  std::optional<double> r_drop, r_fp, r_jitter, r_noise, r_dust, r_border, r_flip, r_low, r_dup;
  synthc->add_option("--drop-rate", r_drop);
  synthc->add_option("--fp-rate", r_fp);
  synthc->add_option("--jitter-px", r_jitter);
  synthc->add_option("--score-noise", r_noise);
  synthc->add_option("--dust-rate", r_dust);
  synthc->add_option("--border-rate", r_border);
  synthc->add_option("--flip-rate", r_flip);
  synthc->add_option("--low-score-rate", r_low);
  synthc->add_option("--duplicate-rate", r_dup);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service under /v1");
  SettingsOverrides so;
  serve->add_option("--host", so.host, "Bind address (env CFU_HOST)");
  serve->add_option("--port", so.port, "Port (env CFU_PORT)");
  serve->add_option("--data-dir", so.data_dir, "Store directory (env CFU_DATA_DIR)");
  serve->add_option("--image-root", so.image_root, "Root for pixel data references (env CFU_IMAGE_ROOT)");
  serve->add_option("--config", so.config, "Settings file (env CFU_CONFIG)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    set_thread_count(jobs);

    if (*ingest) {
      Dataset d = interchange::load_dataset(dataset_file(ingest_gt));
      if (!ingest_pred.empty()) interchange::merge_predictions(d, interchange::load_dataset(dataset_file(ingest_pred)));
      const fs::path root = ingest_images.empty() ? dataset_file(ingest_gt).parent_path() : fs::path(ingest_images);
      for (auto& img : d.images) {
        if (img.dish_ellipse || !img.pixel_data_ref || !fs::exists(root / *img.pixel_data_ref)) continue;
        Dataset one;
        one.images.push_back(img);
        const auto fit = store::fit_missing_ellipses(one, root).front();
        img.dish_ellipse = fit.ellipse;
        img.ellipse_source = fit.source;
      }
      const auto violations = validate_dataset(d);
      if (!violations.empty()) {
        throw InvalidArgument(fmt::format("{}: {}", violations.front().entity, violations.front().message));
      }
      if (!ingest_store.empty()) {
        store::Store st(ingest_store);
        std::cerr << st.create_dataset(d) << '\n';
      }
      write_dataset(ingest_out, d);
      return 0;
    }

    if (*post) {
      const auto cfg = load_config(post_config, post_sets);
      Dataset d = read_dataset(post_in);
      for (const auto& fit : store::fit_missing_ellipses(d, image_root_of(post_in))) {
        d.find_image(fit.image)->dish_ellipse = fit.ellipse;
        d.find_image(fit.image)->ellipse_source = fit.source;
      }
      apply_updates(d, store::pipeline_updates(d, cfg));
      write_dataset(post_out, d);
      const std::string summary = report::render_postproc_summary(report::summarize(d), format_of(post_format));
      (post_out == "-" ? std::cerr : std::cout) << summary;
      return 0;
    }

    if (*evalc) {
      const Dataset pred = read_dataset(eval_pred);
      const Dataset gt = eval_gt == eval_pred ? pred : read_dataset(eval_gt);
      workflow::EvalRequest req;
      if (!eval_iou.empty()) req.config.iou_thresholds = eval_iou;
      req.config.match_iou_for_confusion = eval_confusion_iou;
      if (eval_pooled) req.config.mape_aggregation = eval::MapeAggregation::Pooled;
      req.splits = splits_of(eval_splits);
      std::vector<Dataset> rater_data;
      rater_data.reserve(eval_raters.size());
      for (const auto& spec : eval_raters) {
        std::vector<std::string> parts;
        std::stringstream ss(spec);
        std::string part;
        while (parts.size() < 3 && std::getline(ss, part, ':')) parts.push_back(part);
        std::string path;
        std::getline(ss, path);
        if (parts.size() != 3 || path.empty()) throw InvalidArgument(fmt::format("bad --rater '{}'", spec));
        if (parts[1] != "user" && parts[1] != "model") throw InvalidArgument("rater kind must be user or model");
        if (parts[2] != "ground_truth" && parts[2] != "predictions") {
          throw InvalidArgument("rater source must be ground_truth or predictions");
        }
        rater_data.push_back(read_dataset(path));
        req.raters.push_back({parts[0], parts[1] == "model" ? eval::RaterKind::Model : eval::RaterKind::User,
                              &rater_data.back(), parts[2] == "predictions"});
      }
      const auto report = workflow::evaluate_datasets(pred, gt, req);
      write_text(eval_out, report::render_eval_report(report, format_of(eval_format)));
      return 0;
    }

    if (*searchc) {
      const Dataset d = read_dataset(search_in);
      search::SearchSpace space;
      if (!search_space.empty()) space = search::space_from_key_values(read_key_values(search_space));
      search::SearchOptions opts;
      opts.splits = splits_of(search_splits);
      opts.base = load_config(search_base, {});
      const auto result = search::grid_search(d, space, opts);
      std::cout << postproc::to_key_values(result.best_config) << fmt::format("objective = {}\n", result.objective);
      const std::string table = search::render_search_table(result);
      if (search_out.empty()) {
        std::cout << '\n' << table;
      } else {
        write_text(search_out, table);
      }
      return 0;
    }

    if (*exportc) {
      const Dataset d = read_dataset(export_in);
      const auto result = workflow::export_experiment(d, export_experiment, export_confidence);
      for (const auto& diag : result.diagnostics) {
        std::cerr << fmt::format("{} {}: {}\n", diag.severity == quant::Severity::Error ? "error" : "warning", diag.code,
                                 diag.message);
      }
      if (!result.csv) return 1;
      write_text(export_out, *result.csv);
      return 0;
    }

    if (*synthc) {
      if (synth_preset == "search") {
        synth::write_dataset_dir(synth::search_fixture(synth_seed), synth_out);
        return 0;
      }
      scfg.seed = synth_seed;
      scfg.near_threshold = synth_near;
      if (synth_preset == "planted") scfg.perturbation = synth::planted_perturbation();
      auto& p = scfg.perturbation;
      if (r_drop) p.drop_rate = *r_drop;
      if (r_fp) p.false_positive_rate = *r_fp;
      if (r_jitter) p.jitter_px = *r_jitter;
      if (r_noise) p.score_noise = *r_noise;
      if (r_dust) p.dust_rate = *r_dust;
      if (r_border) p.border_rate = *r_border;
      if (r_flip) p.class_flip_rate = *r_flip;
      if (r_low) p.low_score_rate = *r_low;
      if (r_dup) p.duplicate_rate = *r_dup;
      synth::write_dataset_dir(synth::generate_dataset(scfg, synth_images), synth_out);
      return 0;
    }

    if (*serve) {
      const ServiceSettings s = resolve_settings(so);
      set_thread_count(jobs > 0 ? jobs : s.jobs);
      store::Store st(s.data_dir);
      api::Service service(st, {s.image_root, {}});
      api::HttpServer server(service);
      const int port = server.bind(s.host, s.port);
      std::cerr << fmt::format("listening on {}:{}\n", s.host, port);
      server.listen();
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
