#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <set>

#include "itgan/data.hpp"
#include "itgan/optim.hpp"

using namespace itgan;

TEST_CASE("gen_shapes is deterministic and balanced") {
  Dataset a = gen_shapes(10, 20, 16, 16, 1, 7);
  Dataset b = gen_shapes(10, 20, 16, 16, 1, 7);
  Dataset c = gen_shapes(10, 20, 16, 16, 1, 8);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  CHECK(a.pixels != c.pixels);
  auto by = a.indices_by_class();
  for (const auto& cls : by) CHECK(cls.size() == 20);
  CHECK_THROWS_AS(gen_shapes(11, 5), Error);
}

TEST_CASE("normalization is the documented affine map and inverts exactly") {
  for (int p = 0; p < 256; p++)
    CHECK(unit_to_u8(u8_to_unit(static_cast<uint8_t>(p))) == p);
  Dataset ds;
  ds.H = 1;
  ds.W = 1;
  ds.Ch = 1;
  ds.C = 1;
  ds.pixels = {161};
  ds.labels = {0};
  Tensor img = ds.images({0});
  CHECK(img.at(0) == doctest::Approx(161.0 / 127.5 - 1.0).epsilon(1e-7));
  CHECK(img.at(0) == doctest::Approx(0.262745).epsilon(1e-5));
}

TEST_CASE("dataset file round-trips byte-identically; corrupt files rejected") {
  Dataset ds = gen_shapes(10, 6, 16, 16, 1, 3);
  std::string path = "test_data_roundtrip.itgd";
  save_dataset(ds, path);
  Dataset back = load_dataset(path);
  CHECK(back.pixels == ds.pixels);
  CHECK(back.labels == ds.labels);
  CHECK(back.H == ds.H);
  CHECK(back.C == ds.C);

  // byte-identical file for same content
  save_dataset(back, "test_data_roundtrip2.itgd");
  std::ifstream f1(path, std::ios::binary), f2("test_data_roundtrip2.itgd", std::ios::binary);
  std::vector<char> b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::vector<char> b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  // truncation
  {
    std::ofstream t("test_data_trunc.itgd", std::ios::binary);
    t.write(b1.data(), static_cast<std::streamsize>(b1.size() / 2));
  }
  CHECK_THROWS_AS(load_dataset("test_data_trunc.itgd"), Error);
  try {
    load_dataset("test_data_trunc.itgd");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }

  // bad magic
  {
    std::vector<char> bad = b1;
    bad[0] = 'X';
    std::ofstream t("test_data_badmagic.itgd", std::ios::binary);
    t.write(bad.data(), static_cast<std::streamsize>(bad.size()));
  }
  CHECK_THROWS_AS(load_dataset("test_data_badmagic.itgd"), Error);
  CHECK_THROWS_AS(load_dataset("no_such_file.itgd"), Error);
  try {
    load_dataset("no_such_file.itgd");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::missing_input);
  }
  std::remove(path.c_str());
  std::remove("test_data_roundtrip2.itgd");
  std::remove("test_data_trunc.itgd");
  std::remove("test_data_badmagic.itgd");
}

TEST_CASE("stratified split: 80/10/10 per class, content preserved") {
  Dataset ds = gen_shapes(10, 40, 16, 16, 1, 5);
  DatasetSplits sp = stratified_split(ds, 11);
  auto count_class = [](const Dataset& d, int64_t c) {
    return std::count(d.labels.begin(), d.labels.end(), c);
  };
  for (int64_t c = 0; c < 10; c++) {
    CHECK(count_class(sp.train, c) == 32);
    CHECK(count_class(sp.val, c) == 4);
    CHECK(count_class(sp.test, c) == 4);
  }
  // the three splits together hold exactly the original images
  auto img_multiset = [](const Dataset& d, std::multiset<std::string>& out) {
    for (int64_t i = 0; i < d.count(); i++)
      out.insert(std::string(reinterpret_cast<const char*>(d.pixels.data() + i * d.image_bytes()),
                             static_cast<size_t>(d.image_bytes())));
  };
  std::multiset<std::string> orig, merged;
  img_multiset(ds, orig);
  img_multiset(sp.train, merged);
  img_multiset(sp.val, merged);
  img_multiset(sp.test, merged);
  CHECK(orig == merged);
}

TEST_CASE("class batch sampler: validity, determinism, exhaustive draw") {
  Dataset ds = gen_shapes(4, 12, 16, 16, 1, 2);
  ClassBatchSampler s1(ds, 9), s2(ds, 9);
  for (int64_t c = 0; c < 4; c++) {
    auto b1 = s1.sample(c, 5);
    auto b2 = s2.sample(c, 5);
    CHECK(b1 == b2);
    std::set<int64_t> uniq(b1.begin(), b1.end());
    CHECK(uniq.size() == 5);
    for (int64_t i : b1) CHECK(ds.labels[static_cast<size_t>(i)] == c);
  }
  // drawing the whole class is a permutation of it
  ClassBatchSampler s3(ds, 1);
  auto whole = s3.sample(2, 12);
  std::set<int64_t> uniq(whole.begin(), whole.end());
  CHECK(uniq.size() == 12);
  for (int64_t i : whole) CHECK(ds.labels[static_cast<size_t>(i)] == 2);
  // oversized request falls back to replacement and says so
  bool wr = false;
  auto over = s3.sample(2, 20, &wr);
  CHECK(wr);
  CHECK(over.size() == 20);
}

TEST_CASE("sampler frequencies are uniform within 3 sigma") {
  Dataset ds = gen_shapes(1, 50, 16, 16, 1, 4);
  ClassBatchSampler s(ds, 13);
  std::vector<int> freq(50, 0);
  for (int i = 0; i < 10000; i++) freq[static_cast<size_t>(s.sample(0, 1)[0])]++;
  // n=10000, p=1/50: mean 200, sigma = sqrt(n p (1-p)) = 14
  for (int f : freq) {
    CHECK(f > 200 - 42);
    CHECK(f < 200 + 42);
  }
}

TEST_CASE("a linear classifier separates the shape classes well above chance") {
  Dataset full = gen_shapes(10, 60, 16, 16, 1, 21);
  DatasetSplits sp = stratified_split(full, 22);
  int64_t d = sp.train.image_bytes();
  Tensor xtr = reshape(sp.train.all_images(), {sp.train.count(), d});
  Tensor xval = reshape(sp.val.all_images(), {sp.val.count(), d});
  Tensor w = Tensor::zeros({d, 10}).set_requires_grad(true);
  Tensor b = Tensor::zeros({10}).set_requires_grad(true);
  Sgd opt({w, b}, SgdConfig{.lr = 0.1, .momentum = 0.9});
  for (int epoch = 0; epoch < 40; epoch++) {
    Tensor loss = softmax_cross_entropy(add_rowvec(matmul(xtr, w), b), sp.train.labels);
    opt.step(grad(loss, {w, b}));
  }
  NoGradGuard ng;
  auto pred = argmax_rows(add_rowvec(matmul(xval, w), b));
  int hits = 0;
  for (size_t i = 0; i < pred.size(); i++)
    if (pred[i] == sp.val.labels[i]) hits++;
  double acc = static_cast<double>(hits) / static_cast<double>(pred.size());
  CHECK(acc > 0.3);  // 3x chance for 10 classes
}
