#include "chef/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>

#include "chef/error.hpp"

namespace chef {

std::vector<std::string> metric_tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (char raw : text) {
    const unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.push_back(std::string(1, static_cast<char>(c)));
    } else {
      word.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

namespace {

using NgramCounts = std::unordered_map<std::string, std::size_t>;

NgramCounts ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) {
      if (j) key.push_back('\x1f');
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

std::size_t clipped_overlap(const NgramCounts& hyp, const NgramCounts& ref) {
  std::size_t total = 0;
  for (const auto& [key, count] : hyp) {
    auto it = ref.find(key);
    if (it != ref.end()) total += std::min(count, it->second);
  }
  return total;
}

}  // namespace

double sacrebleu(const std::vector<std::string>& hypotheses,
                 const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size())
    throw DimError("sacrebleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                   std::to_string(references.size()) + " references");
  if (hypotheses.empty()) throw DimError("sacrebleu: empty corpus");

  constexpr std::size_t kMaxOrder = 4;
  std::size_t matches[kMaxOrder] = {0, 0, 0, 0};
  std::size_t totals[kMaxOrder] = {0, 0, 0, 0};
  std::size_t hyp_len = 0, ref_len = 0;

  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const std::vector<std::string> hyp = metric_tokenize(hypotheses[i]);
    const std::vector<std::string> ref = metric_tokenize(references[i]);
    hyp_len += hyp.size();
    ref_len += ref.size();
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      const NgramCounts hc = ngram_counts(hyp, n);
      const NgramCounts rc = ngram_counts(ref, n);
      matches[n - 1] += clipped_overlap(hc, rc);
      totals[n - 1] += hyp.size() >= n ? hyp.size() - n + 1 : 0;
    }
  }

  if (hyp_len == 0) return 0.0;

  double log_prec_sum = 0.0;
  std::size_t zeros_seen = 0;
  for (std::size_t n = 0; n < kMaxOrder; ++n) {
    const double denom = static_cast<double>(std::max<std::size_t>(totals[n], 1));
    double p;
    if (matches[n] == 0) {
      ++zeros_seen;
      p = 1.0 / (std::pow(2.0, static_cast<double>(zeros_seen)) * denom);
    } else {
      p = static_cast<double>(matches[n]) / denom;
    }
    log_prec_sum += std::log(p);
  }

  const double bp =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_prec_sum / static_cast<double>(kMaxOrder));
}

Rouge2 rouge2(const std::string& hypothesis, const std::string& reference) {
  const NgramCounts hyp = ngram_counts(metric_tokenize(hypothesis), 2);
  const NgramCounts ref = ngram_counts(metric_tokenize(reference), 2);
  std::size_t hyp_total = 0, ref_total = 0;
  for (const auto& [k, v] : hyp) hyp_total += v;
  for (const auto& [k, v] : ref) ref_total += v;
  const std::size_t overlap = clipped_overlap(hyp, ref);

  Rouge2 out;
  if (hyp_total > 0) out.precision = static_cast<double>(overlap) / static_cast<double>(hyp_total);
  if (ref_total > 0) out.recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
  if (out.precision + out.recall > 0)
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

}  // namespace chef
