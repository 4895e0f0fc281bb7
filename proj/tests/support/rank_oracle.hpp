#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tvgan/recog.hpp"
#include "tvgan/rng.hpp"

namespace tvgan::testing {

inline double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return static_cast<double>(1.0L - dot / std::sqrt(na * nb));
}

// Exhaustive rank: list every (distance, subject, index), sort, walk to the
// first correct entry, then push it behind every wrong entry sharing its
// distance. Distances are taken from `dist` so ties are exact.
inline int oracle_rank(const std::vector<double>& dist, const std::vector<std::string>& subjects,
                       const std::string& truth) {
  struct Row {
    double d;
    std::size_t index;
    bool correct;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < dist.size(); ++i) rows.push_back({dist[i], i, subjects[i] == truth});
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.d != b.d ? a.d < b.d : a.index < b.index;
  });
  std::size_t pos = 0;
  while (!rows[pos].correct) ++pos;
  int rank = static_cast<int>(pos) + 1;
  for (std::size_t j = pos + 1; j < rows.size() && rows[j].d == rows[pos].d; ++j)
    if (!rows[j].correct) ++rank;
  return rank;
}

// Per-subject-min variant of the oracle.
inline int oracle_rank_subject_min(const std::vector<double>& dist,
                                   const std::vector<std::string>& subjects,
                                   const std::string& truth) {
  std::map<std::string, double> best;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    auto it = best.find(subjects[i]);
    if (it == best.end()) {
      best[subjects[i]] = dist[i];
      order.push_back(subjects[i]);
    } else {
      it->second = std::min(it->second, dist[i]);
    }
  }
  std::vector<double> d;
  for (const auto& s : order) d.push_back(best[s]);
  return oracle_rank(d, order, truth);
}

struct RankInstance {
  Gallery gallery;
  Embedding query;
  std::string truth;
};

// Small random instance. Coordinates are drawn from a coarse integer grid
// and some gallery vectors are duplicated or scaled so exact ties occur.
inline RankInstance random_rank_instance(Rng& rng) {
  RankInstance inst;
  const int d = 1 + static_cast<int>(rng.below(8));
  const int m = 1 + static_cast<int>(rng.below(20));
  const int n_subjects = 1 + static_cast<int>(rng.below(std::min(m, 6)));
  const auto draw = [&] {
    Embedding e(d);
    do {
      for (auto& v : e) v = static_cast<double>(static_cast<int>(rng.below(5)) - 2);
    } while (std::all_of(e.begin(), e.end(), [](double v) { return v == 0.0; }));
    return e;
  };
  inst.gallery.dim = d;
  for (int i = 0; i < m; ++i) {
    GalleryEntry entry;
    entry.subject = "s" + std::to_string(i < n_subjects ? i : rng.below(n_subjects));
    if (i > 0 && rng.bernoulli(0.25)) {
      entry.embedding = inst.gallery.entries[rng.below(i)].embedding;
      if (rng.bernoulli(0.5))
        for (auto& v : entry.embedding) v *= 2.0;
    } else {
      entry.embedding = draw();
    }
    inst.gallery.entries.push_back(std::move(entry));
  }
  inst.query = rng.bernoulli(0.3) ? inst.gallery.entries[rng.below(m)].embedding : draw();
  inst.truth = inst.gallery.entries[rng.below(m)].subject;
  return inst;
}

}  // namespace tvgan::testing
