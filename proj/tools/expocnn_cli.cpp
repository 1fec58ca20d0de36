// expocnn command-line front end: dataset generation, training, evaluation,
// robustness sweeps, histograms, single predictions and gradient checks.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "expocnn/csv.hpp"
#include "expocnn/evaluate.hpp"
#include "expocnn/gradcheck.hpp"
#include "expocnn/io.hpp"
#include "expocnn/loss.hpp"
#include "expocnn/parallel.hpp"
#include "expocnn/train.hpp"

using namespace expocnn;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  return os;
}

template <class Fn>
void write_csv(const std::string& path, Fn&& fn) {
  std::ofstream os = open_out(path);
  fn(os);
  if (!os) throw IoError("error writing '" + path + "'");
}

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ValueError("bad level '" + item + "' in --levels");
    out.push_back(v);
  }
  if (out.empty()) throw ValueError("--levels is empty");
  return out;
}

void print_report(const EvalReport& r) {
  std::cout << "samples " << r.count << "\n"
            << "base_acc " << format_number(r.base_accuracy) << "\n"
            << "exp_acc " << format_number(r.exp_accuracy) << "\n"
            << "joint_acc " << format_number(r.joint_accuracy) << "\n"
            << "mean_loss " << format_number(r.mean_loss) << "\n";
}

struct GenerateArgs {
  std::int64_t count = 0;
  std::uint64_t seed = 0;
  std::uint64_t offset = 0;
  std::string out;
  Dim image_size = 64;
  double noise_max = 0.3;
  double blur_max = 2.0;
  double font_min = 2.0;
  double font_max = 3.5;
};

int run_generate(const GenerateArgs& a) {
  GenConfig g;
  g.count = a.count;
  g.master_seed = a.seed;
  g.index_offset = a.offset;
  g.height = g.width = a.image_size;
  g.noise_sigma = {0.0, a.noise_max};
  g.blur_sigma = {0.0, a.blur_max};
  g.font_scale = {a.font_min, a.font_max};
  const Dataset ds = generate_dataset(g);
  write_dataset(ds, a.out);
  std::cout << "wrote " << ds.samples.size() << " samples to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, out, history, state, resume;
  int epochs = 50;
  int batch = 32;
  double lr = 1e-3;
  int patience = 5;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  const Dataset ds = read_dataset(a.data);
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.adam.learning_rate = a.lr;
  cfg.early_stop_patience = a.patience;
  cfg.seed = a.seed;

  TrainHooks hooks;
  hooks.on_epoch = [](const EpochRecord& r) {
    std::cout << "epoch " << r.epoch << " train " << format_number(r.train_total) << " val "
              << format_number(r.val_total) << " val_base_acc " << format_number(r.val_base_acc)
              << " val_exp_acc " << format_number(r.val_exp_acc) << std::endl;
  };

  Model<float> init = Model<float>::initialize(arch_for(ds), a.seed);
  std::optional<TrainingState> resume_state;
  if (!a.resume.empty()) {
    Checkpoint ck = read_checkpoint(a.resume);
    if (!ck.state) throw FormatError("checkpoint '" + a.resume + "' has no optimizer state to resume from");
    init = std::move(ck.model);
    resume_state = std::move(ck.state);
  }
  Trainer trainer(std::move(init), ds, cfg, hooks);
  if (resume_state) {
    resume_state->adam.config.learning_rate = a.lr;
    trainer.resume(resume_state->adam, resume_state->completed_epochs);
  }
  const TrainResult r = trainer.run();

  write_checkpoint(r.model, nullptr, a.out);
  if (!a.state.empty()) {
    const TrainingState st{trainer.optimizer(), trainer.completed_epochs()};
    write_checkpoint(trainer.current(), &st, a.state);
  }
  if (!a.history.empty()) write_csv(a.history, [&](std::ostream& os) { write_history_csv(os, r.history); });
  std::cout << "best epoch " << r.best_epoch << (r.stopped_early ? " (stopped early)" : "") << ", model written to "
            << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string model, data, report, confusion;
};

int run_eval(const EvalArgs& a) {
  const Checkpoint ck = read_checkpoint(a.model);
  const Dataset ds = read_dataset(a.data);
  check_compatible(ck.model.arch(), ds);
  const EvalReport r = evaluate(ck.model, ds);
  print_report(r);
  if (!a.report.empty()) write_csv(a.report, [&](std::ostream& os) { write_report_csv(os, r); });
  if (!a.confusion.empty()) write_csv(a.confusion, [&](std::ostream& os) { write_confusion_csv(os, r); });
  return 0;
}

struct SweepArgs {
  std::string model, attr, levels, out;
  std::int64_t per_level = 200;
  std::uint64_t seed = 0;
  std::uint64_t offset = 0;
  double noise_max = 0.3;
  double blur_max = 2.0;
  double font_min = 2.0;
  double font_max = 3.5;
};

int run_sweep(const SweepArgs& a) {
  const SweepAttribute attr = parse_sweep_attribute(a.attr);
  const std::vector<double> levels = parse_levels(a.levels);
  const Checkpoint ck = read_checkpoint(a.model);
  const ArchSpec& arch = ck.model.arch();
  GenConfig g;
  g.height = arch.in_height;
  g.width = arch.in_width;
  g.master_seed = a.seed;
  g.index_offset = a.offset;
  g.noise_sigma = {0.0, a.noise_max};
  g.blur_sigma = {0.0, a.blur_max};
  g.font_scale = {a.font_min, a.font_max};
  const auto rows = robustness_sweep(ck.model, g, attr, levels, a.per_level);
  for (const SweepRow& row : rows) {
    std::cout << to_string(attr) << " " << format_number(row.level) << " joint_acc "
              << format_number(row.report.joint_accuracy) << "\n";
  }
  write_csv(a.out, [&](std::ostream& os) { write_sweep_csv(os, attr, rows); });
  return 0;
}

struct HistArgs {
  std::string data, attr, out;
  int bins = 10;
};

int run_hist(const HistArgs& a) {
  const Dataset ds = read_dataset(a.data);
  std::vector<double> values;
  values.reserve(ds.samples.size());
  for (const Sample& s : ds.samples) {
    if (a.attr == "base") {
      values.push_back(s.base_label + ds.base_lo);
    } else if (a.attr == "exponent") {
      values.push_back(s.exp_label + ds.exp_lo);
    } else if (a.attr == "noise") {
      values.push_back(s.meta.noise_sigma);
    } else {
      values.push_back(s.meta.blur_sigma);
    }
  }
  const bool categorical = a.attr == "base" || a.attr == "exponent";
  const auto buckets = categorical ? histogram_categorical(values) : histogram_continuous(values, a.bins);
  write_csv(a.out, [&](std::ostream& os) { write_histogram_csv(os, buckets, categorical); });
  write_histogram_csv(std::cout, buckets, categorical);
  return 0;
}

struct PredictArgs {
  std::string model, data;
  std::int64_t index = 0;
};

int run_predict(const PredictArgs& a) {
  const Checkpoint ck = read_checkpoint(a.model);
  const Dataset ds = read_dataset(a.data);
  if (a.index < 0 || a.index >= static_cast<std::int64_t>(ds.samples.size())) {
    throw ValueError("--index " + std::to_string(a.index) + " out of range for " + std::to_string(ds.samples.size()) +
                     " samples");
  }
  const Sample& s = ds.samples[static_cast<std::size_t>(a.index)];
  Dataset one = ds;
  one.samples = {s};
  check_compatible(ck.model.arch(), one);
  const auto out = model_forward(ck.model, s.image);
  const Tensor pb = softmax(out.base_logits), pe = softmax(out.exp_logits);
  const auto b = argmax(pb.data()), e = argmax(pe.data());
  std::cout << "predicted " << b + ds.base_lo << "^" << e + ds.exp_lo << "\n";
  std::cout << "actual " << s.base_label + ds.base_lo << "^" << s.exp_label + ds.exp_lo << "\n";
  std::cout << "base";
  for (std::size_t i = 0; i < pb.size(); ++i) std::cout << " " << static_cast<std::int64_t>(i) + ds.base_lo << ":" << format_number(pb[i]);
  std::cout << "\nexponent";
  for (std::size_t i = 0; i < pe.size(); ++i) std::cout << " " << static_cast<std::int64_t>(i) + ds.exp_lo << ":" << format_number(pe[i]);
  std::cout << "\n";
  return 0;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::string csv;
};

int run_gradcheck(const GradcheckArgs& a) {
  const ArchSpec arch = ArchSpec::small();
  const Model<float> model = Model<float>::initialize(arch, a.seed);
  Rng rng = Rng::substream(a.seed, 1);
  Tensor image({arch.in_channels, arch.in_height, arch.in_width});
  for (float& v : image.data()) v = static_cast<float>(rng.uniform());
  const Dim b = rng.uniform_int(0, arch.base_classes - 1), e = rng.uniform_int(0, arch.exp_classes - 1);
  const GradCheckReport r = gradient_check(model, image, b, e);
  write_gradcheck_csv(std::cout, r);
  if (!a.csv.empty()) write_csv(a.csv, [&](std::ostream& os) { write_gradcheck_csv(os, r); });
  std::cout << (r.all_pass() ? "PASS" : "FAIL") << " max_rel_err " << format_number(r.max_rel_error()) << " over "
            << model.parameter_count() << " parameters\n";
  return r.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"expocnn: synthetic base^exponent images and a two-head CNN"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (default: runtime setting)")->check(CLI::NonNegativeNumber);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate a dataset file");
  g->add_option("--count", gen.count, "Number of samples")->required()->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "Master seed")->required();
  g->add_option("--out", gen.out, "Output dataset path")->required();
  g->add_option("--image-size", gen.image_size, "Square image side")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--noise-max", gen.noise_max, "Upper noise sigma")->capture_default_str();
  g->add_option("--blur-max", gen.blur_max, "Upper blur sigma")->capture_default_str();
  g->add_option("--font-min", gen.font_min, "Lower font scale")->capture_default_str();
  g->add_option("--font-max", gen.font_max, "Upper font scale")->capture_default_str();
  g->add_option("--offset", gen.offset, "First substream index (disjoint offsets give disjoint sets)")
      ->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a dataset file");
  t->add_option("--data", tr.data, "Dataset path")->required();
  t->add_option("--out", tr.out, "Output checkpoint (best validation epoch)")->required();
  t->add_option("--epochs", tr.epochs, "Maximum epochs")->capture_default_str();
  t->add_option("--batch", tr.batch, "Mini-batch size")->capture_default_str();
  t->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
  t->add_option("--patience", tr.patience, "Early-stopping patience")->capture_default_str();
  t->add_option("--seed", tr.seed, "Initialisation and shuffle seed")->capture_default_str();
  t->add_option("--history", tr.history, "Per-epoch history CSV");
  t->add_option("--state", tr.state, "Also write the last-epoch parameters with optimizer state");
  t->add_option("--resume", tr.resume, "Continue from a checkpoint written with --state");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a model on a dataset file");
  e->add_option("--model", ev.model, "Checkpoint path")->required();
  e->add_option("--data", ev.data, "Dataset path")->required();
  e->add_option("--report", ev.report, "Summary CSV");
  e->add_option("--confusion", ev.confusion, "Confusion matrix CSV");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Accuracy across pinned noise or blur levels");
  s->add_option("--model", sw.model, "Checkpoint path")->required();
  s->add_option("--attr", sw.attr, "noise or blur")->required()->check(CLI::IsMember({"noise", "blur"}));
  s->add_option("--levels", sw.levels, "Comma-separated ascending levels")->required();
  s->add_option("--count-per-level", sw.per_level, "Samples per level")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--seed", sw.seed, "Generation seed")->required();
  s->add_option("--offset", sw.offset, "First substream index")->capture_default_str();
  s->add_option("--noise-max", sw.noise_max, "Upper noise sigma when sweeping blur")->capture_default_str();
  s->add_option("--blur-max", sw.blur_max, "Upper blur sigma when sweeping noise")->capture_default_str();
  s->add_option("--font-min", sw.font_min, "Lower font scale")->capture_default_str();
  s->add_option("--font-max", sw.font_max, "Upper font scale")->capture_default_str();
  s->add_option("--out", sw.out, "Output CSV")->required();

  HistArgs hi;
  auto* h = app.add_subcommand("hist", "Histogram of a label or generation attribute");
  h->add_option("--data", hi.data, "Dataset path")->required();
  h->add_option("--attr", hi.attr, "base, exponent, noise or blur")
      ->required()
      ->check(CLI::IsMember({"base", "exponent", "noise", "blur"}));
  h->add_option("--bins", hi.bins, "Bins for noise and blur")->capture_default_str()->check(CLI::PositiveNumber);
  h->add_option("--out", hi.out, "Output CSV")->required();

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Predict one sample");
  p->add_option("--model", pr.model, "Checkpoint path")->required();
  p->add_option("--data", pr.data, "Dataset path")->required();
  p->add_option("--index", pr.index, "Sample index")->required();

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check on a small model");
  c->add_option("--seed", gc.seed, "Model and input seed")->capture_default_str();
  c->add_option("--csv", gc.csv, "Report CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    std::cerr << app.help();
    return err.get_exit_code() == 0 ? 2 : err.get_exit_code();
  }

  if (threads > 0) set_threads(threads);
  try {
    if (g->parsed()) return run_generate(gen);
    if (t->parsed()) return run_train(tr);
    if (e->parsed()) return run_eval(ev);
    if (s->parsed()) return run_sweep(sw);
    if (h->parsed()) return run_hist(hi);
    if (p->parsed()) return run_predict(pr);
    if (c->parsed()) return run_gradcheck(gc);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
