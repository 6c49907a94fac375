#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cfil/cfil.h"
#include "doctest.h"

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / "cfil_test_capi" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p.parent_path());
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

cfil_dataset* small_dataset() {
  cfil_data_options o;
  cfil_data_options_default(&o);
  o.family_count = 15;
  o.image_size = 32;
  cfil_dataset* ds = nullptr;
  REQUIRE(cfil_dataset_generate(&o, 4, &ds) == CFIL_OK);
  return ds;
}

cfil_train_options small_train() {
  cfil_train_options o;
  cfil_train_options_default(&o);
  o.batch_size = 8;
  o.epochs = 2;
  o.width_scale = 1.0 / 16;
  o.image_size = 32;
  return o;
}

}  // namespace

TEST_CASE("defaults") {
  cfil_data_options d;
  cfil_data_options_default(&d);
  CHECK(d.family_count == 200);
  CHECK(d.rho == 0.9);
  cfil_train_options t;
  cfil_train_options_default(&t);
  CHECK(t.batch_size == 64);
  CHECK(t.epochs == 20);
  CHECK(t.seed == 42);
  CHECK(t.zero_head == 1);
  cfil_gradcheck_options g;
  cfil_gradcheck_options_default(&g);
  CHECK(g.tolerance == 1e-4);
  CHECK(std::string(cfil_status_name(CFIL_INCOMPATIBLE)) == "incompatible");
}

TEST_CASE("errors map to status codes") {
  cfil_data_options o;
  cfil_data_options_default(&o);
  o.family_count = 3;
  cfil_dataset* ds = reinterpret_cast<cfil_dataset*>(0x1);
  CHECK(cfil_dataset_generate(&o, 1, &ds) == CFIL_USAGE);
  CHECK(ds == nullptr);
  CHECK(std::string(cfil_last_error()).find("5-fold") != std::string::npos);
  CHECK(cfil_dataset_load(scratch("absent").string().c_str(), &ds) == CFIL_IO);
  CHECK(ds == nullptr);
  CHECK(cfil_dataset_generate(nullptr, 1, &ds) == CFIL_USAGE);
  cfil_checkpoint* ck = nullptr;
  CHECK(cfil_checkpoint_load(scratch("absent.cfck").string().c_str(), &ck) == CFIL_IO);
  CHECK(std::string(cfil_last_error()).find("absent.cfck") != std::string::npos);
}

TEST_CASE("dataset, training and evaluation through handles") {
  cfil_dataset* ds = small_dataset();
  CHECK(cfil_dataset_size(ds) == 30);
  CHECK(cfil_dataset_positives(ds) == 15);
  CHECK(cfil_dataset_image_size(ds) == 32);
  CHECK(cfil_dataset_verify(ds) == CFIL_OK);

  const auto dir = scratch("data");
  REQUIRE(cfil_dataset_save(ds, dir.string().c_str()) == CFIL_OK);
  cfil_dataset* loaded = nullptr;
  REQUIRE(cfil_dataset_load(dir.string().c_str(), &loaded) == CFIL_OK);
  CHECK(cfil_dataset_size(loaded) == 30);

  const auto opts = small_train();
  std::vector<cfil_epoch_log> log;
  auto record = [](const cfil_epoch_log* e, void* user) { static_cast<std::vector<cfil_epoch_log>*>(user)->push_back(*e); };
  cfil_checkpoint* ck = nullptr;
  REQUIRE(cfil_train(loaded, 3, &opts, nullptr, record, &log, &ck) == CFIL_OK);
  REQUIRE(log.size() == 2);
  CHECK(log[0].lr == 0.001);
  CHECK(cfil_checkpoint_fold(ck) == 3);
  CHECK(cfil_checkpoint_epochs_done(ck) == 2);
  cfil_train_options back;
  cfil_checkpoint_options(ck, &back);
  CHECK(back.width_scale == opts.width_scale);
  CHECK(back.batch_size == opts.batch_size);

  SUBCASE("bad fold") {
    cfil_checkpoint* none = nullptr;
    CHECK(cfil_train(loaded, 6, &opts, nullptr, nullptr, nullptr, &none) == CFIL_USAGE);
    CHECK(none == nullptr);
  }
  SUBCASE("resume continues bitwise") {
    auto three = opts;
    three.epochs = 3;
    cfil_checkpoint *straight = nullptr, *resumed = nullptr;
    REQUIRE(cfil_train(loaded, 3, &three, nullptr, nullptr, nullptr, &straight) == CFIL_OK);
    REQUIRE(cfil_train(loaded, 3, &three, ck, nullptr, nullptr, &resumed) == CFIL_OK);
    const auto a = scratch("straight.cfck"), b = scratch("resumed.cfck");
    cfil_checkpoint_save(straight, a.string().c_str());
    cfil_checkpoint_save(resumed, b.string().c_str());
    CHECK(slurp(a) == slurp(b));
    auto other = three;
    other.seed = 99;
    cfil_checkpoint* clash = nullptr;
    CHECK(cfil_train(loaded, 3, &other, ck, nullptr, nullptr, &clash) == CFIL_INCOMPATIBLE);
    CHECK(cfil_train(loaded, 2, &three, ck, nullptr, nullptr, &clash) == CFIL_INCOMPATIBLE);
    cfil_checkpoint_free(straight);
    cfil_checkpoint_free(resumed);
  }
  SUBCASE("evaluation and export") {
    cfil_report* rep = nullptr;
    REQUIRE(cfil_evaluate(loaded, 3, 0, ck, &rep) == CFIL_OK);
    cfil_report_summary s;
    cfil_report_summary_get(rep, &s);
    CHECK(s.fold == 3);
    CHECK(s.tp + s.tn + s.fp + s.fn == 6);
    CHECK(s.auc >= 0.0);
    CHECK(s.auc <= 1.0);
    CHECK(s.acc == s.wa);  // held-out folds are balanced
    const auto out = scratch("report");
    REQUIRE(cfil_report_export(rep, out.string().c_str()) == CFIL_OK);
    CHECK(std::filesystem::exists(out / "roc.csv"));
    CHECK(std::filesystem::exists(out / "report.csv"));
    CHECK(std::filesystem::exists(out / "roc.svg"));

    cfil_report* on_train = nullptr;
    REQUIRE(cfil_evaluate(loaded, 3, 1, ck, &on_train) == CFIL_OK);
    cfil_report_summary t;
    cfil_report_summary_get(on_train, &t);
    CHECK(t.tp + t.tn + t.fp + t.fn == 24);
    cfil_report_free(on_train);
    cfil_report_free(rep);
  }
  SUBCASE("image size mismatch is incompatible") {
    cfil_data_options o;
    cfil_data_options_default(&o);
    o.family_count = 10;
    cfil_dataset* big = nullptr;
    REQUIRE(cfil_dataset_generate(&o, 4, &big) == CFIL_OK);
    cfil_report* rep = nullptr;
    CHECK(cfil_evaluate(big, 1, 0, ck, &rep) == CFIL_INCOMPATIBLE);
    CHECK(std::string(cfil_last_error()).find("3x32x32") != std::string::npos);
    CHECK(rep == nullptr);
    cfil_dataset_free(big);
  }
  SUBCASE("checkpoint and log files") {
    const auto path = scratch("ck.cfck");
    REQUIRE(cfil_checkpoint_save(ck, path.string().c_str()) == CFIL_OK);
    cfil_checkpoint* again = nullptr;
    REQUIRE(cfil_checkpoint_load(path.string().c_str(), &again) == CFIL_OK);
    CHECK(cfil_checkpoint_epochs_done(again) == 2);
    cfil_checkpoint_free(again);
    const auto log_path = scratch("log.csv");
    REQUIRE(cfil_write_log(log_path.string().c_str(), log.data(), log.size()) == CFIL_OK);
    CHECK(slurp(log_path).rfind("epoch,lr,mean_loss,train_acc\n1,0.001,", 0) == 0);
  }

  cfil_checkpoint_free(ck);
  cfil_dataset_free(loaded);
  cfil_dataset_free(ds);
}

TEST_CASE("gradcheck through the C interface") {
  cfil_gradcheck_options o;
  cfil_gradcheck_options_default(&o);
  o.trials = 2;
  o.width_scale = 1.0 / 16;
  cfil_suite_result results[8];
  std::size_t count = 0;
  CHECK(cfil_gradcheck(&o, results, 8, &count) == CFIL_OK);
  CHECK(count == 4);
  for (std::size_t i = 0; i < count; ++i) CHECK(results[i].passed == 1);
  o.tolerance = 0.0;
  CHECK(cfil_gradcheck(&o, results, 8, &count) == CFIL_CHECK_FAILED);
  CHECK(std::string(cfil_last_error()).find("worst op") != std::string::npos);
  o.trials = 0;
  CHECK(cfil_gradcheck(&o, results, 8, &count) == CFIL_USAGE);
}
