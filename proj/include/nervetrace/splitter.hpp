#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dataset_store.hpp"
#include "domain.hpp"
#include "errors.hpp"

namespace nervetrace::split {

struct SplitSpec {
  int k = 5;
  // train : val : test percentages; the test share is one fold, train/val split the rest.
  int train = 61;
  int val = 19;
  int test = 20;
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 2) throw ParamError("k must be >= 2");
    if (train < 0 || val < 0 || test < 0 || train + val + test != 100) {
      throw ParamError("split proportions must be non-negative and sum to 100");
    }
    if (train + val == 0) throw ParamError("train + val proportion must be positive");
  }
};

struct SplitItem {
  std::string id;
  Side side = Side::left;
  Gain gain = Gain::medium;
  Sex sex = Sex::male;
  bool negative_only = false;  // always placed in train
};

struct Fold {
  std::vector<std::string> train, val, test;
};

struct SplitResult {
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
  std::vector<std::string> warnings;
};

namespace detail {

// Key at a merge level: 0 = side|gain|sex, 1 = side|gain, 2 = side, 3 = everything.
inline std::string stratum_key(const SplitItem& it, int level) {
  std::string k = level < 3 ? std::string(to_string(it.side)) : "*";
  k += '|';
  k += level < 2 ? std::string(to_string(it.gain)) : "*";
  k += '|';
  k += level < 1 ? std::string(to_string(it.sex)) : "*";
  return k;
}

inline long long floor_div(long long a, long long b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
inline long long ceil_div(long long a, long long b) { return -floor_div(-a, b); }

}  // namespace detail

// Video-level stratified k-fold. Strata are side x gain x sex; strata
// smaller than k are merged by dropping sex, then gain, then side. Each
// stratum is shuffled and dealt round-robin into k test groups (the deal
// offset carries across strata so fold sizes differ by at most one). The
// remaining videos of each fold are split train/val by largest remainder,
// keeping every stratum within one video of its global share.
inline SplitResult stratified_kfold(std::vector<SplitItem> items, const SplitSpec& spec) {
  spec.validate();
  SplitResult result;
  result.seed = spec.seed;
  const int k = spec.k;

  std::sort(items.begin(), items.end(), [](const SplitItem& a, const SplitItem& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < items.size(); ++i)
    if (items[i].id == items[i - 1].id) throw SplitError("duplicate video id '" + items[i].id + "'");

  std::vector<std::string> negatives;
  std::vector<SplitItem> eligible;
  for (auto& it : items) (it.negative_only ? negatives.push_back(it.id) : eligible.push_back(it));

  std::vector<int> level(eligible.size(), 0);
  for (int lv = 0; lv < 3; ++lv) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < eligible.size(); ++i)
      if (level[i] == lv) groups[detail::stratum_key(eligible[i], lv)].push_back(i);
    for (const auto& [key, members] : groups) {
      if (static_cast<int>(members.size()) >= k) continue;
      result.warnings.push_back("stratum " + key + " has " + std::to_string(members.size()) +
                                " videos (< k); merging into a coarser stratum");
      for (auto i : members) level[i] = lv + 1;
    }
  }

  std::map<std::string, std::vector<std::string>> strata;
  for (std::size_t i = 0; i < eligible.size(); ++i) strata[detail::stratum_key(eligible[i], level[i])].push_back(eligible[i].id);
  if (auto it = strata.find("*|*|*"); it != strata.end() && static_cast<int>(it->second.size()) < k) {
    result.warnings.push_back("residual stratum has fewer than k videos; some folds get none of it");
  }

  std::mt19937_64 rng(spec.seed);
  struct Stratum {
    std::vector<std::string> order;  // shuffled
    std::vector<int> group;          // test group per position
  };
  std::vector<Stratum> ordered;
  std::size_t offset = 0;
  for (auto& [key, ids] : strata) {
    Stratum s;
    s.order = ids;
    std::shuffle(s.order.begin(), s.order.end(), rng);
    for (std::size_t i = 0; i < s.order.size(); ++i) s.group.push_back(static_cast<int>((offset + i) % k));
    offset += s.order.size();
    ordered.push_back(std::move(s));
  }

  // Shares as exact rationals over D = k * (train + val).
  const long long tv = spec.train + spec.val;
  const long long D = static_cast<long long>(k) * tv;
  const long long val_num = static_cast<long long>(k - 1) * spec.val;    // f_val = val_num / D
  const long long train_num = static_cast<long long>(k - 1) * spec.train;  // f_train = train_num / D

  result.folds.resize(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    Fold& fold = result.folds[static_cast<std::size_t>(f)];
    std::vector<std::vector<std::string>> remaining(ordered.size());
    std::vector<long long> lo(ordered.size()), hi(ordered.size()), base(ordered.size()), quota_num(ordered.size());
    long long total_rem = 0, total_base = 0;
    for (std::size_t s = 0; s < ordered.size(); ++s) {
      const auto& st = ordered[s];
      for (std::size_t i = 0; i < st.order.size(); ++i)
        (st.group[i] == f ? fold.test : remaining[s]).push_back(st.order[i]);
      const long long n = static_cast<long long>(st.order.size());
      const long long rem = static_cast<long long>(remaining[s].size());
      // |val - f_val n| <= 1 and |train - f_train n| <= 1, train = rem - val.
      lo[s] = std::max({0LL, detail::ceil_div(val_num * n - D, D), detail::ceil_div(rem * D - train_num * n - D, D)});
      hi[s] = std::min({rem, detail::floor_div(val_num * n + D, D), detail::floor_div(rem * D - train_num * n + D, D)});
      quota_num[s] = rem * spec.val;  // quota = quota_num / tv
      if (lo[s] > hi[s]) lo[s] = hi[s] = std::clamp((quota_num[s] * 2 + tv) / (2 * tv), 0LL, rem);
      base[s] = std::clamp(quota_num[s] / tv, lo[s], hi[s]);
      total_rem += rem;
      total_base += base[s];
    }

    const long long target = (total_rem * spec.val * 2 + tv) / (2 * tv);
    auto remainder = [&](std::size_t s) { return quota_num[s] - base[s] * tv; };
    std::vector<std::size_t> idx(ordered.size());
    std::iota(idx.begin(), idx.end(), 0);
    while (total_base != target) {
      const bool grow = total_base < target;
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return grow ? remainder(a) > remainder(b) : remainder(a) < remainder(b);
      });
      bool moved = false;
      for (auto s : idx) {
        if (total_base == target) break;
        if (grow && base[s] < hi[s]) {
          ++base[s];
          ++total_base;
          moved = true;
        } else if (!grow && base[s] > lo[s]) {
          --base[s];
          --total_base;
          moved = true;
        }
      }
      if (!moved) break;
    }

    for (std::size_t s = 0; s < ordered.size(); ++s) {
      for (std::size_t i = 0; i < remaining[s].size(); ++i)
        (static_cast<long long>(i) < base[s] ? fold.val : fold.train).push_back(remaining[s][i]);
    }
    fold.train.insert(fold.train.end(), negatives.begin(), negatives.end());
    for (auto* v : {&fold.train, &fold.val, &fold.test}) std::sort(v->begin(), v->end());
  }
  return result;
}

// Builds split items from manifest records: videos without a plexus are
// negative-only; every other video needs patient sex for stratification.
inline std::vector<SplitItem> split_items(const std::vector<VideoRecord>& videos) {
  std::vector<SplitItem> items;
  for (const auto& v : videos) {
    SplitItem it{v.id, v.side, v.gain, Sex::male, v.plexus == Plexus::none};
    if (v.patient) it.sex = v.patient->sex;
    else if (!it.negative_only) throw SplitError("video '" + v.id + "' lacks patient sex needed for stratification");
    items.push_back(std::move(it));
  }
  return items;
}

inline nlohmann::json to_json(const SplitResult& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) folds.push_back({{"train", f.train}, {"val", f.val}, {"test", f.test}});
  return {{"seed", r.seed}, {"folds", folds}};
}

}  // namespace nervetrace::split
