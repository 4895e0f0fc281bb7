#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "rank_oracle.hpp"
#include "tvgan/error.hpp"
#include "tvgan/recog.hpp"

using namespace tvgan;
using namespace tvgan::testing;

namespace {

Gallery make_gallery(const std::vector<std::pair<std::string, Embedding>>& rows) {
  Gallery g;
  for (const auto& [s, e] : rows) g.entries.push_back({s, e});
  g.dim = static_cast<int>(rows.front().second.size());
  return g;
}

// Unit vectors at the given angles, so cosine distance is 1 - cos(angle).
Embedding at_distance(double d) { return {1.0 - d, std::sqrt(1.0 - (1.0 - d) * (1.0 - d))}; }

std::vector<double> distances(const Embedding& q, const Gallery& g) {
  std::vector<double> d;
  for (const auto& e : g.entries) d.push_back(cosine_distance(q, e.embedding));
  return d;
}

std::vector<std::string> subjects(const Gallery& g) {
  std::vector<std::string> s;
  for (const auto& e : g.entries) s.push_back(e.subject);
  return s;
}

// Queries with a prescribed rank against a gallery where distance grows
// with the entry index.
std::vector<Query> queries_with_ranks(const std::vector<int>& ranks, Gallery& gallery, int m) {
  gallery = Gallery{};
  gallery.dim = 2;
  for (int i = 0; i < m; ++i)
    gallery.entries.push_back({"g" + std::to_string(i), at_distance(0.05 * (i + 1))});
  std::vector<Query> q;
  for (int r : ranks) q.push_back({{1.0, 0.0}, "g" + std::to_string(r - 1)});
  return q;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "tvgan-unit" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("cosine distance") {
  const Embedding v = {0.3, -2.0, 5.0};
  CHECK(cosine_distance(v, v) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 1.0);
  CHECK(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{-1, 0}) == 2.0);
  CHECK_THROWS_AS(cosine_distance(std::vector<double>{0, 0}, std::vector<double>{1, 0}),
                  InvalidArgument);
  CHECK_THROWS_AS(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0}),
                  ShapeError);
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    Embedding a(6), b(6);
    for (auto& x : a) x = rng.uniform(-1, 1);
    for (auto& x : b) x = rng.uniform(-1, 1);
    const double d = cosine_distance(a, b);
    CHECK(d == cosine_distance(b, a));
    CHECK((d >= 0.0 && d <= 2.0));
    CHECK(d == doctest::Approx(oracle_cosine(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("rank examples") {
  const Gallery g = make_gallery({{"A", at_distance(0.4)}, {"B", at_distance(0.2)}, {"C", at_distance(0.9)}});
  const auto r = rank_of_query(std::vector<double>{1.0, 0.0}, "A", g);
  CHECK(r.rank == 2);
  CHECK(r.sorted_gallery_subjects == std::vector<std::string>{"B", "A", "C"});

  const Gallery tie = make_gallery({{"A", {1.0, 1.0}}, {"B", {2.0, 2.0}}, {"C", {0.0, 1.0}}});
  CHECK(rank_of_query(std::vector<double>{1.0, 1.0}, "A", tie).rank == 2);
  CHECK(rank_of_query(std::vector<double>{1.0, 1.0}, "B", tie).rank == 2);

  const Gallery exact = make_gallery({{"A", {0.0, 1.0}}, {"B", {1.0, 0.2}}});
  CHECK(rank_of_query(std::vector<double>{1.0, 0.2}, "B", exact).rank == 1);

  CHECK_THROWS_AS(rank_of_query(std::vector<double>{1.0, 0.0}, "Z", g), LookupError);
  CHECK_THROWS_AS(rank_of_query(std::vector<double>{1.0, 0.0, 0.0}, "A", g), ShapeError);
}

TEST_CASE("rank agrees with the exhaustive oracle") {
  Rng rng(2024);
  int ties = 0;
  for (int n = 0; n < 1000; ++n) {
    const auto inst = random_rank_instance(rng);
    const auto d = distances(inst.query, inst.gallery);
    const auto subj = subjects(inst.gallery);
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t j = i + 1; j < d.size(); ++j)
        if (d[i] == d[j] && subj[i] != subj[j]) ++ties;
    REQUIRE(rank_of_query(inst.query, inst.truth, inst.gallery).rank ==
            oracle_rank(d, subj, inst.truth));
    REQUIRE(rank_of_query(inst.query, inst.truth, inst.gallery, RankMode::per_subject_min).rank ==
            oracle_rank_subject_min(d, subj, inst.truth));
  }
  CHECK(ties > 100);
}

TEST_CASE("positive scaling leaves rankings unchanged") {
  Rng rng(77);
  for (int n = 0; n < 100; ++n) {
    const auto inst = random_rank_instance(rng);
    const auto base = rank_of_query(inst.query, inst.truth, inst.gallery);
    Gallery scaled = inst.gallery;
    for (auto& e : scaled.entries) {
      const double s = std::ldexp(1.0, static_cast<int>(rng.below(9)) - 4);
      for (auto& v : e.embedding) v *= s;
    }
    Embedding q = inst.query;
    for (auto& v : q) v *= 8.0;
    const auto moved = rank_of_query(q, inst.truth, scaled);
    CHECK(moved.rank == base.rank);
    CHECK(moved.sorted_gallery_subjects == base.sorted_gallery_subjects);
  }
}

TEST_CASE("rank-k accuracy and CMC") {
  Gallery g;
  const auto q = queries_with_ranks({1, 2, 5, 9}, g, 10);
  const auto acc = rank_k_accuracy(q, g, {1, 3, 5, 7});
  CHECK(acc.at(1) == 0.25);
  CHECK(acc.at(3) == 0.5);
  CHECK(acc.at(5) == 0.75);
  CHECK(acc.at(7) == 0.75);
  CHECK(rank_k_accuracy(q, g, {10}).at(10) == 1.0);

  const auto single = queries_with_ranks({3}, g, 5);
  CHECK(cmc_curve(single, g) == std::vector<double>{0, 0, 1, 1, 1});

  const auto perfect = queries_with_ranks({1, 1, 1}, g, 4);
  for (const auto& [k, v] : rank_k_accuracy(perfect, g, {1, 3})) CHECK(v == 1.0);

  CHECK_THROWS_AS(rank_k_accuracy({}, g, {1}), InvalidArgument);
  CHECK_THROWS_AS(rank_k_accuracy(perfect, g, {3, 1}), InvalidArgument);
  CHECK_THROWS_AS(rank_k_accuracy(perfect, g, {0}), InvalidArgument);
}

TEST_CASE("CMC is monotone and ends at one") {
  Rng rng(5);
  for (int n = 0; n < 200; ++n) {
    const auto inst = random_rank_instance(rng);
    std::vector<Query> queries;
    for (int k = 0; k < 5; ++k) {
      Embedding e(inst.gallery.dim);
      for (auto& v : e) v = rng.uniform(0.1, 1.0);
      queries.push_back({e, inst.gallery.entries[rng.below(inst.gallery.size())].subject});
    }
    queries.push_back({inst.query, inst.truth});
    for (auto mode : {RankMode::per_image, RankMode::per_subject_min}) {
      const auto cmc = cmc_curve(queries, inst.gallery, mode);
      for (std::size_t i = 1; i < cmc.size(); ++i) REQUIRE(cmc[i] >= cmc[i - 1]);
      REQUIRE(cmc.back() == 1.0);
    }
    std::vector<int> ks;
    for (int k = 1; k <= static_cast<int>(inst.gallery.size()); ++k) ks.push_back(k);
    const auto acc = rank_k_accuracy(queries, inst.gallery, ks);
    double prev = 0.0;
    for (const auto& [k, v] : acc) {
      REQUIRE(v >= prev);
      prev = v;
    }
  }
}

TEST_CASE("averaging curves") {
  CHECK(average_curves({{0, 0.5, 1}, {0.5, 1, 1}, {1, 1, 1}}) ==
        std::vector<double>{0.5, 2.5 / 3, 1});
  CHECK_THROWS_AS(average_curves({{0, 1}, {1}}), ShapeError);
  CHECK_THROWS_AS(average_curves({}), InvalidArgument);
}

TEST_CASE("rank mode parsing") {
  CHECK(parse_rank_mode("per-image") == RankMode::per_image);
  CHECK(parse_rank_mode("per-subject-min") == RankMode::per_subject_min);
  CHECK_THROWS_AS(parse_rank_mode("mean"), InvalidArgument);
}

TEST_CASE("toy embedder") {
  const auto data = synthesize_toy_dataset(8, 10, 64, 1);
  const auto emb = toy_embedder(64);
  CHECK(emb->dim() == 192);
  CHECK(emb->embed(data[0].visible) == emb->embed(data[0].visible));
  CHECK(emb->embed(data[0].thermal).size() == 192);
  CHECK_THROWS_AS(emb->embed(Tensor(3, 32, 32)), ShapeError);

  const auto spec = GallerySpec::protocol_a();
  const Gallery gallery = build_gallery(*emb, build_gallery_samples(data, spec, 0), spec);
  CHECK(gallery.size() == 8);
  std::vector<Query> queries;
  for (const auto& s : data) queries.push_back({emb->embed(s.visible), s.subject_id});
  CHECK(rank_k_accuracy(queries, gallery, {1}).at(1) >= 0.9);
  for (const auto& e : gallery.entries) CHECK(rank_of_query(e.embedding, e.subject, gallery).rank == 1);

  CHECK_THROWS_AS(build_gallery(*emb, {}, spec), InvalidArgument);
  auto doubled = build_gallery_samples(data, spec, 0);
  doubled.push_back(doubled.front());
  CHECK_THROWS_AS(build_gallery(*emb, doubled, spec), InvalidArgument);
}

TEST_CASE("content hash") {
  const Tensor a(3, 4, 4, 0.5);
  CHECK(content_hash(a).size() == 64);
  CHECK(content_hash(a) == content_hash(Tensor(3, 4, 4, 0.5)));
  CHECK(content_hash(a) != content_hash(Tensor(3, 4, 4, -0.5)));
  CHECK(content_hash(Tensor(1, 4, 4, 0.0)) != content_hash(Tensor(1, 2, 8, 0.0)));
}

TEST_CASE("external embedder") {
  const auto dir = fresh_dir("external");
  const auto data = synthesize_toy_dataset(3, 2, 64, 9);
  {
    std::ofstream out(dir / "emb.jsonl");
    for (std::size_t i = 0; i < 3; ++i) {
      nlohmann::json rec = {{"sha256", content_hash(data[i].visible)},
                            {"embedding", {1.0 * i, 2.0, 3.0, 4.0}}};
      out << rec.dump() << "\n";
    }
  }

  SUBCASE("file lookup") {
    const ExternalEmbedder e(dir / "emb.jsonl", std::nullopt);
    CHECK(e.size() == 3);
    CHECK(e.dim() == 4);
    CHECK(e.embed(data[2].visible) == Embedding{2.0, 2.0, 3.0, 4.0});
    const std::string hash = content_hash(data[5].visible);
    CHECK_THROWS_WITH_AS(e.embed(data[5].visible), doctest::Contains(hash.c_str()), LookupError);
  }
  SUBCASE("inconsistent file") {
    std::ofstream(dir / "bad.jsonl") << R"({"sha256": "aa", "embedding": [1, 2]})" << "\n"
                                     << R"({"sha256": "bb", "embedding": [1, 2, 3]})" << "\n";
    CHECK_THROWS_AS(ExternalEmbedder(dir / "bad.jsonl", std::nullopt), ShapeError);
    std::ofstream(dir / "garbage.jsonl") << "{oops\n";
    CHECK_THROWS_AS(ExternalEmbedder(dir / "garbage.jsonl", std::nullopt), DecodeError);
  }
  SUBCASE("command endpoint") {
    const auto script = dir / "embed.sh";
    std::ofstream(script) << "#!/bin/sh\necho '[0.5, 0.25, 1, 2]'\n";
    std::filesystem::permissions(script, std::filesystem::perms::owner_all);
    const ExternalEmbedder e(dir / "emb.jsonl", script.string());
    CHECK(e.embed(data[5].visible) == Embedding{0.5, 0.25, 1.0, 2.0});
    CHECK(e.embed(data[0].visible) == Embedding{0.0, 2.0, 3.0, 4.0});
  }
  SUBCASE("command with the wrong dimension") {
    const auto script = dir / "short.sh";
    std::ofstream(script) << "#!/bin/sh\necho '[1, 2]'\n";
    std::filesystem::permissions(script, std::filesystem::perms::owner_all);
    const ExternalEmbedder e(dir / "emb.jsonl", script.string());
    CHECK_THROWS_AS(e.embed(data[5].visible), ShapeError);
  }
  SUBCASE("failing command") {
    const auto script = dir / "fail.sh";
    std::ofstream(script) << "#!/bin/sh\nexit 3\n";
    std::filesystem::permissions(script, std::filesystem::perms::owner_all);
    const ExternalEmbedder e(std::nullopt, script.string());
    CHECK_THROWS_AS(e.embed(data[5].visible), LoadError);
  }
  SUBCASE("spec strings") {
    CHECK(make_embedder("toy", 64)->name() == "toy");
    CHECK(make_embedder("file:" + (dir / "emb.jsonl").string(), 64)->dim() == 4);
    CHECK_THROWS_AS(make_embedder("vgg", 64), InvalidArgument);
  }
}
