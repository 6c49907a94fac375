#include <cmath>
#include <cstring>
#include <exception>
#include <limits>
#include <new>
#include <string>
#include <vector>

#include "cfil/cfil.h"
#include "cfil/data.hpp"
#include "cfil/error.hpp"
#include "cfil/metrics.hpp"
#include "cfil/selfcheck.hpp"
#include "cfil/trainer.hpp"

struct cfil_dataset {
  cfil::data::Dataset value;
};

struct cfil_checkpoint {
  cfil::train::Checkpoint value;
};

struct cfil_report {
  cfil::metrics::EvalReport value;
};

namespace {

using namespace cfil;

thread_local std::string g_last_error;

cfil_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Input:
    case ErrorKind::Dimension:
    case ErrorKind::Capacity:
      return CFIL_USAGE;
    case ErrorKind::Io:
    case ErrorKind::Parse:
      return CFIL_IO;
    case ErrorKind::Incompatible:
      return CFIL_INCOMPATIBLE;
    case ErrorKind::Numeric:
    case ErrorKind::Contract:
    case ErrorKind::Undefined:
      return CFIL_CHECK_FAILED;
  }
  return CFIL_CHECK_FAILED;
}

cfil_status fail(cfil_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

template <typename F>
cfil_status guarded(F&& body) {
  g_last_error.clear();
  try {
    return body();
  } catch (const Error& e) {
    return fail(status_of(e.kind()), std::string(to_string(e.kind())) + ": " + e.what());
  } catch (const std::bad_alloc&) {
    return fail(CFIL_CHECK_FAILED, "out of memory");
  } catch (const std::exception& e) {
    return fail(CFIL_CHECK_FAILED, e.what());
  }
}

#define CFIL_REQUIRE(cond, what) \
  if (!(cond)) return fail(CFIL_USAGE, what)

train::TrainConfig to_config(const cfil_train_options& o) {
  train::TrainConfig c;
  c.batch_size = o.batch_size;
  c.epochs = o.epochs;
  c.seed = o.seed;
  c.width_scale = o.width_scale;
  c.sign_mode = o.sign_mode == CFIL_SIGN_NEGATED ? weighted::SignMode::NegatedSquare : weighted::SignMode::Positive;
  c.zero_head = o.zero_head != 0;
  c.image_size = o.image_size;
  return c;
}

cfil_train_options from_config(const train::TrainConfig& c) {
  cfil_train_options o;
  o.batch_size = c.batch_size;
  o.epochs = c.epochs;
  o.seed = c.seed;
  o.width_scale = c.width_scale;
  o.sign_mode = c.sign_mode == weighted::SignMode::NegatedSquare ? CFIL_SIGN_NEGATED : CFIL_SIGN_POSITIVE;
  o.zero_head = c.zero_head ? 1 : 0;
  o.image_size = static_cast<int>(c.image_size);
  return o;
}

// Settings other than the epoch budget must agree for a resumed run.
std::string resume_mismatch(const train::TrainConfig& stored, const train::TrainConfig& wanted) {
  std::string diff;
  auto note = [&diff](const char* key, const std::string& a, const std::string& b) {
    if (a != b) diff += std::string(diff.empty() ? "" : ", ") + key + " " + a + " vs " + b;
  };
  note("batch_size", std::to_string(stored.batch_size), std::to_string(wanted.batch_size));
  note("seed", std::to_string(stored.seed), std::to_string(wanted.seed));
  note("width_scale", std::to_string(stored.width_scale), std::to_string(wanted.width_scale));
  note("sign_mode", weighted::to_string(stored.sign_mode), weighted::to_string(wanted.sign_mode));
  note("zero_head", std::to_string(stored.zero_head), std::to_string(wanted.zero_head));
  note("image_size", std::to_string(stored.image_size), std::to_string(wanted.image_size));
  return diff;
}

void check_image_size(const std::vector<data::PairSample>& samples, Index expected) {
  for (const auto& s : samples) {
    const Shape want{3, expected, expected};
    if (!(s.parent_image.shape() == want) || !(s.child_image.shape() == want)) {
      throw IncompatibleError("checkpoint expects images " + want.to_string() + ", pair " +
                              std::to_string(s.pair_id) + " has " + s.parent_image.shape().to_string() + " and " +
                              s.child_image.shape().to_string());
    }
  }
}

double or_nan(const std::optional<double>& v) { return v ? *v : std::numeric_limits<double>::quiet_NaN(); }

void copy_text(char* dst, std::size_t cap, const std::string& src) {
  const std::size_t n = std::min(cap - 1, src.size());
  std::memcpy(dst, src.data(), n);
  dst[n] = '\0';
}

}  // namespace

extern "C" {

const char* cfil_last_error(void) { return g_last_error.c_str(); }

const char* cfil_status_name(cfil_status status) {
  switch (status) {
    case CFIL_OK:
      return "ok";
    case CFIL_CHECK_FAILED:
      return "check failed";
    case CFIL_USAGE:
      return "usage";
    case CFIL_IO:
      return "io";
    case CFIL_INCOMPATIBLE:
      return "incompatible";
  }
  return "unknown";
}

void cfil_data_options_default(cfil_data_options* options) {
  if (!options) return;
  const data::SyntheticFamilyModel m;
  options->family_count = m.family_count;
  options->latent_dim = m.latent_dim;
  options->rho = m.rho;
  options->sigma = m.sigma;
  options->gain = m.gain;
  options->image_size = static_cast<int>(m.image_size);
}

cfil_status cfil_dataset_generate(const cfil_data_options* options, uint64_t seed, cfil_dataset** out) {
  return guarded([&] {
    CFIL_REQUIRE(options && out, "null argument");
    *out = nullptr;
    data::SyntheticFamilyModel m;
    m.family_count = options->family_count;
    m.latent_dim = options->latent_dim;
    m.rho = options->rho;
    m.sigma = options->sigma;
    m.gain = options->gain;
    m.image_size = options->image_size;
    *out = new cfil_dataset{data::build_dataset(m, seed)};
    return CFIL_OK;
  });
}

cfil_status cfil_dataset_save(const cfil_dataset* dataset, const char* dir) {
  return guarded([&] {
    CFIL_REQUIRE(dataset && dir, "null argument");
    data::save_dataset(dataset->value, dir);
    return CFIL_OK;
  });
}

cfil_status cfil_dataset_load(const char* path, cfil_dataset** out) {
  return guarded([&] {
    CFIL_REQUIRE(path && out, "null argument");
    *out = nullptr;
    *out = new cfil_dataset{data::load_manifest(path)};
    return CFIL_OK;
  });
}

void cfil_dataset_free(cfil_dataset* dataset) { delete dataset; }

size_t cfil_dataset_size(const cfil_dataset* dataset) { return dataset ? dataset->value.pairs.size() : 0; }

size_t cfil_dataset_positives(const cfil_dataset* dataset) {
  if (!dataset) return 0;
  std::size_t n = 0;
  for (const auto& p : dataset->value.pairs) n += p.positive ? 1 : 0;
  return n;
}

int cfil_dataset_image_size(const cfil_dataset* dataset) {
  if (!dataset || dataset->value.pairs.empty()) return 0;
  return static_cast<int>(dataset->value.pairs.front().parent_image.dim(2));
}

cfil_status cfil_dataset_verify(const cfil_dataset* dataset) {
  return guarded([&] {
    CFIL_REQUIRE(dataset, "null argument");
    const auto report = data::verify_protocol(dataset->value);
    if (report.ok()) return CFIL_OK;
    std::string all;
    for (const auto& p : report.problems) all += (all.empty() ? "" : "; ") + p;
    return fail(CFIL_CHECK_FAILED, "protocol violated: " + all);
  });
}

void cfil_train_options_default(cfil_train_options* options) {
  if (options) *options = from_config(train::TrainConfig{});
}

cfil_status cfil_train(const cfil_dataset* dataset, int fold, const cfil_train_options* options,
                       const cfil_checkpoint* resume, cfil_epoch_callback on_epoch, void* user,
                       cfil_checkpoint** out) {
  return guarded([&] {
    CFIL_REQUIRE(dataset && options && out, "null argument");
    *out = nullptr;
    const auto config = to_config(*options);
    config.validate();
    const auto split = data::select_split(dataset->value, fold);
    check_image_size(split.first, config.image_size);

    train::Checkpoint start;
    if (resume) {
      const auto diff = resume_mismatch(resume->value.config, config);
      if (!diff.empty()) throw IncompatibleError("resume checkpoint settings differ: " + diff);
      if (resume->value.fold != fold) {
        throw IncompatibleError("resume checkpoint was trained for fold " + std::to_string(resume->value.fold) +
                                ", not " + std::to_string(fold));
      }
      start = resume->value.clone();
      start.config.epochs = config.epochs;
    } else {
      start = train::initial_checkpoint(config, fold);
    }

    auto forward = [&](const train::EpochLog& e) {
      if (!on_epoch) return;
      const cfil_epoch_log entry{e.epoch, e.lr, e.mean_loss, e.train_acc};
      on_epoch(&entry, user);
    };
    *out = new cfil_checkpoint{train::train(split.first, start, forward)};
    return CFIL_OK;
  });
}

cfil_status cfil_checkpoint_save(const cfil_checkpoint* checkpoint, const char* path) {
  return guarded([&] {
    CFIL_REQUIRE(checkpoint && path, "null argument");
    train::save_checkpoint(path, checkpoint->value);
    return CFIL_OK;
  });
}

cfil_status cfil_checkpoint_load(const char* path, cfil_checkpoint** out) {
  return guarded([&] {
    CFIL_REQUIRE(path && out, "null argument");
    *out = nullptr;
    *out = new cfil_checkpoint{train::load_checkpoint(path)};
    return CFIL_OK;
  });
}

void cfil_checkpoint_free(cfil_checkpoint* checkpoint) { delete checkpoint; }

void cfil_checkpoint_options(const cfil_checkpoint* checkpoint, cfil_train_options* options) {
  if (checkpoint && options) *options = from_config(checkpoint->value.config);
}

int cfil_checkpoint_fold(const cfil_checkpoint* checkpoint) { return checkpoint ? checkpoint->value.fold : 0; }

int cfil_checkpoint_epochs_done(const cfil_checkpoint* checkpoint) {
  return checkpoint ? checkpoint->value.epochs_done : 0;
}

cfil_status cfil_write_log(const char* path, const cfil_epoch_log* entries, size_t count) {
  return guarded([&] {
    CFIL_REQUIRE(path && (entries || count == 0), "null argument");
    std::vector<train::EpochLog> log;
    for (std::size_t i = 0; i < count; ++i) {
      log.push_back({entries[i].epoch, entries[i].lr, entries[i].mean_loss, entries[i].train_acc});
    }
    train::write_log(path, log);
    return CFIL_OK;
  });
}

cfil_status cfil_evaluate(const cfil_dataset* dataset, int fold, int on_train, const cfil_checkpoint* checkpoint,
                          cfil_report** out) {
  return guarded([&] {
    CFIL_REQUIRE(dataset && checkpoint && out, "null argument");
    *out = nullptr;
    const auto split = data::select_split(dataset->value, fold);
    const auto& samples = on_train ? split.first : split.second;
    if (samples.empty()) throw ConfigError("fold " + std::to_string(fold) + " selects no pairs to evaluate");
    const auto& ck = checkpoint->value;
    check_image_size(samples, ck.config.image_size);
    const auto scores = train::predict(ck.model, samples, ck.config.batch_size);
    *out = new cfil_report{metrics::evaluate(scores, samples, fold)};
    return CFIL_OK;
  });
}

void cfil_report_summary_get(const cfil_report* report, cfil_report_summary* out) {
  if (!report || !out) return;
  const auto& r = report->value;
  out->fold = r.fold;
  out->tp = r.overall.tp;
  out->tn = r.overall.tn;
  out->fp = r.overall.fp;
  out->fn = r.overall.fn;
  out->acc = or_nan(r.acc());
  out->mva = or_nan(r.mva());
  out->wa = or_nan(r.wa());
  out->tpr = or_nan(metrics::tpr(r.overall));
  out->fpr = or_nan(metrics::fpr(r.overall));
  out->auc = r.auc;
  for (std::size_t i = 0; i < data::kRelations.size(); ++i) {
    out->relation_acc[i] = or_nan(r.relation_accuracy(data::kRelations[i]));
  }
}

cfil_status cfil_report_export(const cfil_report* report, const char* dir) {
  return guarded([&] {
    CFIL_REQUIRE(report && dir, "null argument");
    metrics::export_report(report->value, dir);
    return CFIL_OK;
  });
}

void cfil_report_free(cfil_report* report) { delete report; }

void cfil_gradcheck_options_default(cfil_gradcheck_options* options) {
  if (!options) return;
  options->width_scale = 0.125;
  options->trials = 20;
  options->tolerance = 1e-4;
  options->seed = 42;
}

cfil_status cfil_gradcheck(const cfil_gradcheck_options* options, cfil_suite_result* results, size_t capacity,
                           size_t* count) {
  return guarded([&] {
    CFIL_REQUIRE(options, "null argument");
    CFIL_REQUIRE(options->trials >= 1, "trials must be >= 1");
    CFIL_REQUIRE(options->width_scale > 0.0 && std::isfinite(options->width_scale), "width scale must be positive");
    CFIL_REQUIRE(options->tolerance >= 0.0, "tolerance must be >= 0");

    selfcheck::SuiteOptions so;
    so.trials = options->trials;
    so.seed = options->seed;
    // The closed-form check is on absolute error and keeps its own, tighter bound.
    const double closed_form_tolerance = std::min(options->tolerance, 1e-8);
    const std::vector<std::pair<selfcheck::SuiteResult, double>> suites{
        {selfcheck::worst_of("numerics", selfcheck::numerics_suite(so)), options->tolerance},
        {selfcheck::worst_of("weighted", selfcheck::weighted_suite(so)), options->tolerance},
        {selfcheck::loss_closed_form_suite(so), closed_form_tolerance},
        {selfcheck::network_suite(so, options->width_scale), options->tolerance},
    };

    if (count) *count = suites.size();
    bool all = true;
    for (std::size_t i = 0; i < suites.size(); ++i) {
      const auto& [r, tol] = suites[i];
      const bool passed = r.max_relative_error < tol;
      all = all && passed;
      if (results && i < capacity) {
        copy_text(results[i].name, sizeof results[i].name, r.name);
        copy_text(results[i].worst, sizeof results[i].worst, r.worst);
        results[i].max_error = r.max_relative_error;
        results[i].tolerance = tol;
        results[i].passed = passed ? 1 : 0;
      }
    }
    if (all) return CFIL_OK;
    std::string failed;
    for (const auto& [r, tol] : suites) {
      if (!(r.max_relative_error < tol)) failed += (failed.empty() ? "" : "; ") + r.name + " worst op " + r.worst;
    }
    return fail(CFIL_CHECK_FAILED, "gradient check failed: " + failed);
  });
}

}  // extern "C"
