#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cfil/cfil.h"

namespace {

constexpr std::uint64_t kDefaultSeed = 42;

// A failure that ends the command with the given exit status.
struct Exit {
  cfil_status status;
  std::string message;
};

void check(cfil_status status) {
  if (status != CFIL_OK) throw Exit{status, cfil_last_error()};
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Plain key=value lines; blank lines and lines starting with '#' are skipped.
std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Exit{CFIL_IO, "cannot open config file " + path};
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw Exit{CFIL_USAGE, path + " line " + std::to_string(line_no) + ": expected key=value"};
    }
    kv[trim(text.substr(0, eq))] = trim(text.substr(eq + 1));
  }
  return kv;
}

template <typename T>
T parse_as(const std::string& key, const std::string& text) {
  T value{};
  if (!CLI::detail::lexical_conversion<T, T>({text}, value)) {
    throw Exit{CFIL_USAGE, "config value for " + key + " is invalid: '" + text + "'"};
  }
  return value;
}

// Every setting resolves as flag > environment > config file > default, and
// the outcome is echoed so a log records exactly what ran.
class Settings {
 public:
  explicit Settings(CLI::App& command) : command_(command) {
    command_.add_option("--config", config_path_, "File of key=value lines supplying defaults for the flags");
  }

  template <typename T>
  CLI::Option* add(const std::string& key, T& value, const std::string& help, const char* env = nullptr) {
    CLI::Option* opt = command_.add_option("--" + key, value, help)->capture_default_str();
    if (env) opt->description(help + " (env " + env + ")");
    entries_.push_back({key, opt, env, [&value, key](const std::string& text) { value = parse_as<T>(key, text); },
                        [&value] { return CLI::detail::to_string(value); }, "default"});
    return opt;
  }

  void resolve(const std::set<std::string>& known_elsewhere) {
    std::map<std::string, std::string> file;
    if (!config_path_.empty()) file = read_config_file(config_path_);
    for (const auto& [key, text] : file) {
      bool known = known_elsewhere.count(key) > 0;
      for (const auto& e : entries_) known = known || e.key == key;
      if (!known) throw Exit{CFIL_USAGE, "unknown key '" + key + "' in " + config_path_};
    }
    for (auto& e : entries_) {
      e.source = "default";
      if (e.option->count() > 0) {
        e.source = "flag";
      } else if (const char* v = e.env ? std::getenv(e.env) : nullptr; v && *v) {
        e.assign(v);
        e.source = std::string("env ") + e.env;
      } else if (auto it = file.find(e.key); it != file.end()) {
        e.assign(it->second);
        e.source = "file " + config_path_;
      }
    }
  }

  void echo() const {
    std::printf("config command=%s\n", command_.get_name().c_str());
    for (const auto& e : entries_) std::printf("config %s=%s (%s)\n", e.key.c_str(), e.show().c_str(), e.source.c_str());
    std::fflush(stdout);
  }

  bool given(const std::string& key) const {
    for (const auto& e : entries_) {
      if (e.key == key) return e.source != "default";
    }
    return false;
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.key);
    return out;
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* option;
    const char* env;
    std::function<void(const std::string&)> assign;
    std::function<std::string()> show;
    std::string source;
  };

  CLI::App& command_;
  std::string config_path_;
  std::vector<Entry> entries_;
};

void require_value(const Settings& s, const std::string& key) {
  if (!s.given(key)) throw Exit{CFIL_USAGE, "--" + key + " is required"};
}

cfil_sign_mode parse_sign_mode(const std::string& text) {
  if (text == "positive") return CFIL_SIGN_POSITIVE;
  if (text == "negated") return CFIL_SIGN_NEGATED;
  throw Exit{CFIL_USAGE, "sign mode must be 'positive' or 'negated', got '" + text + "'"};
}

struct Dataset {
  cfil_dataset* handle = nullptr;
  ~Dataset() { cfil_dataset_free(handle); }
};

struct Checkpoint {
  cfil_checkpoint* handle = nullptr;
  ~Checkpoint() { cfil_checkpoint_free(handle); }
};

struct Report {
  cfil_report* handle = nullptr;
  ~Report() { cfil_report_free(handle); }
};

std::string fmt(double v, const char* pattern = "%.4f") {
  if (std::isnan(v)) return "undefined";
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Exit{CFIL_IO, "cannot create " + dir + ": " + ec.message()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kinship verification with weighted non-local and local feature interactions"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  // gen-data
  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic kinship dataset (manifest plus images)");
  Settings gen_s(*gen);
  cfil_data_options data_opts;
  cfil_data_options_default(&data_opts);
  std::uint64_t gen_seed = kDefaultSeed;
  std::string gen_out;
  gen_s.add("families", data_opts.family_count, "Number of families (at least 5)");
  gen_s.add("rho", data_opts.rho, "Kin strength in [0, 1]");
  gen_s.add("sigma", data_opts.sigma, "Pixel noise scale");
  gen_s.add("latent-dim", data_opts.latent_dim, "Latent dimension of the family model");
  gen_s.add("gain", data_opts.gain, "Decoder gain before the sigmoid");
  gen_s.add("image-size", data_opts.image_size, "Image side length in pixels");
  gen_s.add("seed", gen_seed, "Run seed", "CFIL_SEED");
  gen_s.add("out", gen_out, "Output directory");

  // train
  CLI::App* trn = app.add_subcommand("train", "Train on every fold except --fold");
  Settings trn_s(*trn);
  cfil_train_options train_opts;
  cfil_train_options_default(&train_opts);
  std::uint64_t train_seed = kDefaultSeed;
  std::string train_data, train_out, train_sign = "positive", train_resume;
  int train_fold = 1;
  trn_s.add("data", train_data, "Manifest file or dataset directory");
  trn_s.add("fold", train_fold, "Held-out fold (1..5)")->check(CLI::Range(1, 5));
  trn_s.add("epochs", train_opts.epochs, "Number of epochs")->check(CLI::NonNegativeNumber);
  trn_s.add("batch", train_opts.batch_size, "Batch size")->check(CLI::PositiveNumber);
  trn_s.add("width-scale", train_opts.width_scale, "Channel scale of the non-local branch")->check(CLI::PositiveNumber);
  trn_s.add("sign-mode", train_sign, "Distance kernel sign: positive or negated")
      ->check(CLI::IsMember({"positive", "negated"}));
  trn_s.add("resume", train_resume, "Checkpoint to continue from");
  trn_s.add("seed", train_seed, "Run seed", "CFIL_SEED");
  trn_s.add("out", train_out, "Output directory for checkpoint.cfck and train_log.csv");

  // eval
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out fold");
  Settings ev_s(*ev);
  std::string eval_data, eval_checkpoint, eval_out;
  int eval_fold = 1;
  bool on_train = false;
  ev_s.add("data", eval_data, "Manifest file or dataset directory");
  ev_s.add("fold", eval_fold, "Held-out fold (1..5)")->check(CLI::Range(1, 5));
  ev_s.add("checkpoint", eval_checkpoint, "Checkpoint file");
  ev_s.add("out", eval_out, "Output directory for report.csv, roc.csv and roc.svg");
  ev->add_flag("--on-train", on_train, "Evaluate on the four training folds instead");

  // gradcheck
  CLI::App* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  Settings gc_s(*gc);
  cfil_gradcheck_options gc_opts;
  cfil_gradcheck_options_default(&gc_opts);
  gc_s.add("width-scale", gc_opts.width_scale, "Channel scale for the end-to-end network check")
      ->check(CLI::PositiveNumber);
  gc_s.add("trials", gc_opts.trials, "Random inputs per op")->check(CLI::PositiveNumber);
  gc_s.add("tolerance", gc_opts.tolerance, "Largest accepted relative error")->check(CLI::NonNegativeNumber);
  gc_s.add("seed", gc_opts.seed, "Run seed", "CFIL_SEED");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : CFIL_USAGE;
  }

  std::set<std::string> all_keys;
  for (const Settings* s : {&gen_s, &trn_s, &ev_s, &gc_s}) {
    for (const auto& k : s->keys()) all_keys.insert(k);
  }

  try {
    if (gen->parsed()) {
      gen_s.resolve(all_keys);
      gen_s.echo();
      require_value(gen_s, "out");
      Dataset ds;
      check(cfil_dataset_generate(&data_opts, gen_seed, &ds.handle));
      check(cfil_dataset_verify(ds.handle));
      check(cfil_dataset_save(ds.handle, gen_out.c_str()));
      const auto pos = cfil_dataset_positives(ds.handle);
      std::printf("wrote %zu pairs (%zu positive, %zu negative) to %s\n", cfil_dataset_size(ds.handle), pos,
                  cfil_dataset_size(ds.handle) - pos, gen_out.c_str());
    } else if (trn->parsed()) {
      trn_s.resolve(all_keys);
      trn_s.echo();
      require_value(trn_s, "data");
      require_value(trn_s, "out");
      train_opts.seed = train_seed;
      train_opts.sign_mode = parse_sign_mode(train_sign);
      Dataset ds;
      check(cfil_dataset_load(train_data.c_str(), &ds.handle));
      train_opts.image_size = cfil_dataset_image_size(ds.handle);
      Checkpoint resume;
      if (!train_resume.empty()) check(cfil_checkpoint_load(train_resume.c_str(), &resume.handle));
      ensure_dir(train_out);

      std::vector<cfil_epoch_log> log;
      if (resume.handle) {
        // Earlier epochs of a resumed run come from the log beside its checkpoint.
        const auto old_log = std::filesystem::path(train_resume).parent_path() / "train_log.csv";
        std::ifstream is(old_log);
        std::string line;
        std::getline(is, line);
        while (std::getline(is, line) && static_cast<int>(log.size()) < cfil_checkpoint_epochs_done(resume.handle)) {
          cfil_epoch_log e{};
          if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &e.epoch, &e.lr, &e.mean_loss, &e.train_acc) == 4) {
            log.push_back(e);
          }
        }
      }
      auto on_epoch = [](const cfil_epoch_log* e, void* user) {
        static_cast<std::vector<cfil_epoch_log>*>(user)->push_back(*e);
        std::printf("epoch %d lr %g loss %.6f train_acc %.4f\n", e->epoch, e->lr, e->mean_loss, e->train_acc);
        std::fflush(stdout);
      };
      Checkpoint trained;
      check(cfil_train(ds.handle, train_fold, &train_opts, resume.handle, on_epoch, &log, &trained.handle));
      const auto ck_path = (std::filesystem::path(train_out) / "checkpoint.cfck").string();
      const auto log_path = (std::filesystem::path(train_out) / "train_log.csv").string();
      check(cfil_checkpoint_save(trained.handle, ck_path.c_str()));
      check(cfil_write_log(log_path.c_str(), log.data(), log.size()));
      std::printf("wrote %s and %s\n", ck_path.c_str(), log_path.c_str());
    } else if (ev->parsed()) {
      ev_s.resolve(all_keys);
      ev_s.echo();
      std::printf("config on-train=%s (%s)\n", on_train ? "true" : "false", on_train ? "flag" : "default");
      std::fflush(stdout);
      require_value(ev_s, "data");
      require_value(ev_s, "checkpoint");
      require_value(ev_s, "out");
      Checkpoint ck;
      check(cfil_checkpoint_load(eval_checkpoint.c_str(), &ck.handle));
      Dataset ds;
      check(cfil_dataset_load(eval_data.c_str(), &ds.handle));
      Report rep;
      check(cfil_evaluate(ds.handle, eval_fold, on_train ? 1 : 0, ck.handle, &rep.handle));
      check(cfil_report_export(rep.handle, eval_out.c_str()));
      cfil_report_summary s;
      cfil_report_summary_get(rep.handle, &s);
      const char* names[4] = {"F-S", "F-D", "M-S", "M-D"};
      for (int i = 0; i < 4; ++i) std::printf("acc %s %s\n", names[i], fmt(s.relation_acc[i], "%.2f").c_str());
      std::printf("ACC %s\nMVA %s\nWA %s\nAUC %s\n", fmt(s.acc, "%.2f").c_str(), fmt(s.mva, "%.2f").c_str(),
                  fmt(s.wa, "%.2f").c_str(), fmt(s.auc).c_str());
    } else if (gc->parsed()) {
      gc_s.resolve(all_keys);
      gc_s.echo();
      cfil_suite_result results[8];
      std::size_t count = 0;
      const cfil_status status = cfil_gradcheck(&gc_opts, results, 8, &count);
      if (status != CFIL_OK && status != CFIL_CHECK_FAILED) check(status);
      for (std::size_t i = 0; i < count && i < 8; ++i) {
        const auto& r = results[i];
        std::printf("%-18s max_error %.3e tolerance %.1e %s worst %s\n", r.name, r.max_error, r.tolerance,
                    r.passed ? "PASS" : "FAIL", r.worst);
      }
      check(status);
    }
  } catch (const Exit& e) {
    std::fprintf(stderr, "error (%s): %s\n", cfil_status_name(e.status), e.message.c_str());
    return e.status;
  }
  return 0;
}
