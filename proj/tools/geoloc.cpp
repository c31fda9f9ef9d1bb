// geoloc: synthetic corpora, ingestion, analysis, training, prediction and
// evaluation of location-type classifiers from the command line.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geoloc/config.hpp"
#include "geoloc/evaluation.hpp"
#include "geoloc/ingest.hpp"
#include "geoloc/model_io.hpp"
#include "geoloc/synth.hpp"

namespace fs = std::filesystem;
using namespace geoloc;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  int jobs = 1;

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
    for (const auto& kv : sets) c.set_assignment(kv);
    if (seed) c.set("seed", std::to_string(*seed));
    return c;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "Flat key = value configuration file")
      ->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "Override a configuration key (key=value); repeatable");
  app->add_option("--seed", c.seed, "Seed for every random choice (default 42)");
}

void log_line(const std::string& s) { std::cerr << "geoloc: " << s << '\n'; }

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write file: " + p.string());
  out << s;
}

TypeCatalog corpus_catalog(const std::string& dir) {
  std::ifstream in(dir + "/catalog.json");
  if (!in) return TypeCatalog::default_catalog();
  nlohmann::json j;
  in >> j;
  return TypeCatalog(j.get<std::vector<std::string>>());
}

std::vector<SiteRecord> read_corpus(const std::string& dir, const TypeCatalog& catalog) {
  const auto path = dir + "/sites.jsonl";
  if (!fs::exists(path)) throw Error("corpus has no sites.jsonl: " + dir);
  auto sites = read_sites(path, catalog);
  for (const auto& s : sites) {
    if (!s.truth) throw ValidationError("corpus site '" + s.id + "' has no type");
  }
  return sites;
}

std::shared_ptr<const EmbeddingTable> maybe_embeddings(const std::string& path, ModelKind kind) {
  if (kind != ModelKind::cnn) return nullptr;
  if (path.empty()) throw ValidationError("the cnn model needs --embeddings");
  EmbeddingLoadReport rep;
  auto t = std::make_shared<const EmbeddingTable>(load_embeddings(path, &rep));
  if (rep.duplicates) log_line("warning: " + std::to_string(rep.duplicates) + " duplicate embedding rows, last kept");
  return t;
}

LatLon parse_latlon(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ValidationError("--entity expects LAT,LON");
  try {
    LatLon p{std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
    require_in_bounds(p);
    return p;
  } catch (const std::invalid_argument&) {
    throw ValidationError("--entity expects LAT,LON");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Location-type classification from geotagged messages"};
  app.require_subcommand(1);
  Common common;

  // synth
  std::string out_dir;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic entity/message corpus");
  add_common(synth, common);
  synth->add_option("--out", out_dir, "Output directory")->required();

  // ingest
  std::string messages_path, entities_path;
  auto* ingest = app.add_subcommand("ingest", "Radius join, min filter and class-mean subsampling");
  add_common(ingest, common);
  ingest->add_option("--messages", messages_path, "Message JSONL")->required()->check(CLI::ExistingFile);
  ingest->add_option("--entities", entities_path, "Entity JSONL")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", out_dir, "Output directory")->required();

  // analyze
  std::string corpus_dir;
  auto* analyze = app.add_subcommand("analyze", "Distance, day-period, POS and KL-bigram reports");
  add_common(analyze, common);
  analyze->add_option("--corpus", corpus_dir, "Ingested corpus directory")->required()->check(CLI::ExistingDirectory);
  analyze->add_option("--out", out_dir, "Output directory")->required();

  // train
  std::string approach = "joint", model = "logit", embeddings_path;
  auto* train = app.add_subcommand("train", "Train a model on a whole corpus");
  add_common(train, common);
  train->add_option("--corpus", corpus_dir, "Ingested corpus directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--approach", approach, "pipeline or joint")->check(CLI::IsMember({"pipeline", "joint"}));
  train->add_option("--model", model, "logit, nb, cnn, majority or random")
      ->check(CLI::IsMember({"logit", "nb", "cnn", "majority", "random"}));
  train->add_option("--embeddings", embeddings_path, "Word vectors (text format), cnn only")->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "Model directory")->required();

  // predict
  std::string model_dir, entity;
  auto* predict = app.add_subcommand("predict", "Rank location types for one entity");
  add_common(predict, common);
  predict->add_option("--model", model_dir, "Model directory")->required()->check(CLI::ExistingDirectory);
  predict->add_option("--messages", messages_path, "Message JSONL")->required()->check(CLI::ExistingFile);
  predict->add_option("--entity", entity, "Entity point as LAT,LON")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Repeated 64:16:20 evaluation");
  add_common(eval, common);
  eval->add_option("--corpus", corpus_dir, "Ingested corpus directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--approach", approach, "pipeline or joint")->check(CLI::IsMember({"pipeline", "joint"}));
  eval->add_option("--model", model, "logit, nb, cnn, majority, random or oracle")
      ->check(CLI::IsMember({"logit", "nb", "cnn", "majority", "random", "oracle"}));
  eval->add_option("--embeddings", embeddings_path, "Word vectors (text format), cnn only")->check(CLI::ExistingFile);
  eval->add_option("--jobs", common.jobs, "Repetitions run in parallel")->check(CLI::PositiveNumber);
  eval->add_option("--out", out_dir, "Report directory")->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Message-level logit feature-family ablation");
  add_common(ablate, common);
  ablate->add_option("--corpus", corpus_dir, "Ingested corpus directory")->required()->check(CLI::ExistingDirectory);
  ablate->add_option("--jobs", common.jobs, "Repetitions run in parallel")->check(CLI::PositiveNumber);
  ablate->add_option("--out", out_dir, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: usage: " << msg << '\n';
    return 2;
  }

  try {
    const RunConfig cfg = common.resolve();
    const auto cfg_echo = "# effective configuration\n" + cfg.dump();

    if (*synth) {
      const auto sc = cfg.synth();
      fs::create_directories(out_dir);
      const auto out = write_synth(sc, out_dir);
      write_text(fs::path(out_dir) / "config.txt", cfg_echo);
      log_line("wrote " + std::to_string(out.entities.size()) + " entities, " +
               std::to_string(out.messages.size()) + " messages to " + out_dir);
      return 0;
    }

    const auto catalog = TypeCatalog::default_catalog();

    if (*ingest) {
      const auto icfg = cfg.ingest();
      const auto msgs = load_messages(messages_path);
      const auto ents = load_entities(entities_path, catalog);
      auto sites = associate(msgs.items, ents.items, icfg);
      SubsampleReport rep;
      bool labeled = std::all_of(ents.items.begin(), ents.items.end(), [](const SiteRecord& s) { return s.truth.has_value(); });
      if (labeled) sites = filter_and_subsample(std::move(sites), catalog, icfg, &rep);
      fs::create_directories(out_dir);
      write_sites(out_dir + "/sites.jsonl", sites, catalog);
      write_text(fs::path(out_dir) / "catalog.json", nlohmann::json(catalog.names()).dump() + "\n");
      std::ostringstream r;
      r << cfg_echo << "\nmessages read: " << msgs.items.size() << " (" << msgs.errors.size() << " malformed lines)\n"
        << "entities read: " << ents.items.size() << " (" << ents.errors.size() << " malformed lines)\n"
        << "sites written: " << sites.size() << "\n";
      if (labeled) {
        r << "dropped below min_messages: " << rep.dropped_below_min << "\nsubsampled sites: " << rep.subsampled
          << "\n";
        for (std::size_t k = 0; k < rep.class_mean.size(); ++k) {
          r << "class mean " << catalog.name(static_cast<int>(k)) << ": " << rep.class_mean[k] << "\n";
        }
      } else {
        r << "entities carry no types: filtering and subsampling skipped\n";
      }
      for (const auto& w : rep.warnings) r << "warning: " << w << "\n";
      for (const auto& e : msgs.errors) r << "messages line " << e.line << ": " << e.reason << "\n";
      for (const auto& e : ents.errors) r << "entities line " << e.line << ": " << e.reason << "\n";
      write_text(fs::path(out_dir) / "ingest_report.txt", r.str());
      log_line("wrote " + std::to_string(sites.size()) + " sites to " + out_dir);
      return 0;
    }

    if (*analyze) {
      const auto corpus = read_corpus(corpus_dir, corpus_catalog(corpus_dir));
      const auto a = corpus_analysis(corpus, catalog, cfg.num("tz_offset_hours"),
                                     static_cast<std::size_t>(cfg.integer("top_k_bigrams")));
      fs::create_directories(out_dir);
      write_analysis_report(out_dir, a, cfg.to_json());
      for (const auto& d : a.diagnostics) log_line("diagnostic: " + d);
      return 0;
    }

    if (*train) {
      const auto corpus = read_corpus(corpus_dir, corpus_catalog(corpus_dir));
      auto spec = cfg.model_spec();
      spec.approach = approach_from_name(approach);
      spec.kind = model_kind_from_name(model);
      spec.embeddings = maybe_embeddings(embeddings_path, spec.kind);
      const auto tm = train_model(corpus, catalog, spec);
      save_model(out_dir, tm);
      write_text(fs::path(out_dir) / "config.txt", cfg_echo);
      log_line("trained " + std::string(approach_name(spec.approach)) + "/" + model_kind_name(spec.kind) +
               " on " + std::to_string(corpus.size()) + " sites");
      return 0;
    }

    if (*predict) {
      const auto tm = load_model(model_dir);
      const auto msgs = load_messages(messages_path);
      SiteRecord site;
      site.id = "query";
      site.point = parse_latlon(entity);
      IngestConfig icfg;
      icfg.radius_m = tm.spec.radius_m;
      auto joined = associate(msgs.items, {site}, icfg);
      site = std::move(joined.at(0));
      const auto p = tm.predict(site);
      if (p.empty) log_line("warning: no messages within radius; reporting training priors");
      std::vector<std::size_t> order(p.scores.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (static_cast<int>(a) == p.label) return true;
        if (static_cast<int>(b) == p.label) return false;
        return p.scores[a] > p.scores[b];
      });
      std::cout << std::fixed << std::setprecision(6);
      for (auto k : order) std::cout << tm.catalog.name(static_cast<int>(k)) << '\t' << p.scores[k] << '\n';
      return 0;
    }

    if (*eval) {
      const auto corpus = read_corpus(corpus_dir, corpus_catalog(corpus_dir));
      auto spec = cfg.model_spec();
      spec.approach = approach_from_name(approach);
      const bool oracle = model == "oracle";
      spec.kind = oracle ? ModelKind::majority : model_kind_from_name(model);
      spec.embeddings = maybe_embeddings(embeddings_path, spec.kind);
      auto opt = cfg.eval_options();
      opt.jobs = common.jobs;
      auto rep = run_eval(corpus, catalog, spec, cfg.split_plan(), opt, oracle);
      if (oracle) rep.config["model"] = "oracle";
      rep.config["run"] = cfg.to_json();
      fs::create_directories(out_dir);
      write_eval_report(out_dir, rep);
      log_line("mean accuracy " + detail::fmt(rep.mean_accuracy) + ", macro-F1 " + detail::fmt(rep.mean_macro_f1));
      return 0;
    }

    if (*ablate) {
      const auto corpus = read_corpus(corpus_dir, corpus_catalog(corpus_dir));
      auto spec = cfg.model_spec();
      spec.approach = Approach::pipeline;
      spec.kind = ModelKind::logit;
      auto table = run_ablation(corpus, catalog, spec, cfg.split_plan(), cfg.ablation_families(), common.jobs);
      table.config["run"] = cfg.to_json();
      fs::create_directories(out_dir);
      write_ablation_report(out_dir, table);
      return 0;
    }
  } catch (const ParseError& e) {
    std::cerr << "error: parse: " << e.what() << '\n';
  } catch (const ValidationError& e) {
    std::cerr << "error: invalid: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << '\n';
  }
  return 1;
}
