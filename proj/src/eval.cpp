#include "cir/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cir {

using nlohmann::json;

namespace {
// Evaluation always runs the stabilized cosine; degenerate embeddings from an
// untrained model must rank deterministically rather than throw.
constexpr double kEvalEps = 1e-8;
}  // namespace

json EvalReport::to_json() const {
  json j;
  for (const auto& [k, v] : recall_at) j["recall_at"][std::to_string(k)] = v;
  for (const auto& [k, v] : recall_subset_at) j["recall_subset_at"][std::to_string(k)] = v;
  for (const auto& [name, v] : averages) j["averages"][name] = v;
  j["num_queries"] = num_queries;
  return j;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << "num_queries " << num_queries << "\n";
  for (const auto& [k, v] : recall_at) os << "recall@" << k << " " << v << "\n";
  for (const auto& [k, v] : recall_subset_at) os << "recall_subset@" << k << " " << v << "\n";
  for (const auto& [name, v] : averages) os << name << " " << v << "\n";
  return os.str();
}

int rank_of_target(const double* scores, int n, int target) {
  if (target < 0 || target >= n) throw InvalidInputError("target index out of range");
  const double ts = scores[target];
  int rank = 0;
  for (int j = 0; j < n; ++j) {
    if (scores[j] > ts || (scores[j] == ts && j < target)) ++rank;
  }
  return rank;
}

EvalReport compute_recalls(const Matrix& scores, const std::vector<int>& targets,
                           const std::vector<std::vector<int>>& subsets,
                           const EvalProtocol& protocol) {
  const int q = scores.rows();
  const int g = scores.cols();
  if (static_cast<int>(targets.size()) != q) {
    throw InvalidInputError("targets length must match the score matrix rows");
  }
  if (protocol.recall_ks.empty()) throw ConfigError("recall Ks must be nonempty");
  const bool want_subsets = !protocol.subset_ks.empty();
  if (want_subsets) {
    const bool any = std::any_of(subsets.begin(), subsets.end(),
                                 [](const std::vector<int>& s) { return !s.empty(); });
    if (subsets.size() != static_cast<size_t>(q) || !any) {
      throw ConfigError("subset recall requested but queries carry no subset annotations");
    }
  }

  std::vector<int> ranks(q);
  std::vector<int> subset_ranks(q, -1);
  for (int i = 0; i < q; ++i) {
    ranks[i] = rank_of_target(scores.row(i), g, targets[i]);
    if (want_subsets) {
      const std::vector<int>& subset = subsets[i];
      if (subset.empty()) throw ConfigError("query " + std::to_string(i) + " has no subset");
      const double ts = scores(i, targets[i]);
      bool found = false;
      int rank = 0;
      for (int j : subset) {
        if (j < 0 || j >= g) throw InvalidInputError("subset index out of range");
        if (j == targets[i]) {
          found = true;
          continue;
        }
        const double sj = scores(i, j);
        if (sj > ts || (sj == ts && j < targets[i])) ++rank;
      }
      if (!found) throw InvalidInputError("subset of query " + std::to_string(i) +
                                          " does not contain its target");
      subset_ranks[i] = rank;
    }
  }

  EvalReport report;
  report.num_queries = q;
  for (int k : protocol.recall_ks) {
    int hits = 0;
    for (int i = 0; i < q; ++i) hits += ranks[i] < k ? 1 : 0;
    report.recall_at[k] = static_cast<double>(hits) / q;
  }
  double avg = 0.0;
  for (int k : protocol.recall_ks) avg += report.recall_at[k];
  report.averages["avg_recall"] = avg / protocol.recall_ks.size();

  if (want_subsets) {
    for (int k : protocol.subset_ks) {
      int hits = 0;
      for (int i = 0; i < q; ++i) hits += subset_ranks[i] < k ? 1 : 0;
      report.recall_subset_at[k] = static_cast<double>(hits) / q;
    }
    double savg = 0.0;
    for (int k : protocol.subset_ks) savg += report.recall_subset_at[k];
    report.averages["avg_subset_recall"] = savg / protocol.subset_ks.size();
    if (report.recall_at.count(5) && report.recall_subset_at.count(1)) {
      report.averages["cirr_avg"] =
          0.5 * (report.recall_at.at(5) + report.recall_subset_at.at(1));
    }
  }
  return report;
}

Matrix student_score_matrix(const Model& model, const std::vector<Triplet>& queries,
                            const Matrix& gallery_payloads) {
  const int g = gallery_payloads.rows();
  const int q = static_cast<int>(queries.size());
  std::vector<Vec> gallery_emb(g);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < g; ++j) {
    Vec payload(gallery_payloads.row(j), gallery_payloads.row(j) + gallery_payloads.cols());
    gallery_emb[j] = target_embedding(model, payload);
  }
  for (const Triplet& t : queries) {
    if (t.reference_index < 0 || t.reference_index >= g) {
      throw InvalidInputError("query reference index out of gallery range");
    }
  }
  Matrix scores(q, g);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < q; ++i) {
    const Triplet& t = queries[i];
    Vec ref(gallery_payloads.row(t.reference_index),
            gallery_payloads.row(t.reference_index) + gallery_payloads.cols());
    const Vec query_emb = student_query_embedding(model, ref, t.text_payload);
    for (int j = 0; j < g; ++j) {
      scores(i, j) = cosine_similarity(query_emb.data(), gallery_emb[j].data(),
                                       static_cast<int>(query_emb.size()), kEvalEps);
    }
  }
  return scores;
}

EvalReport evaluate(const Model& model, const std::vector<Triplet>& queries,
                    const Matrix& gallery_payloads, const EvalProtocol& protocol) {
  if (queries.empty()) throw InvalidInputError("evaluate requires at least one query");
  const Matrix scores = student_score_matrix(model, queries, gallery_payloads);
  std::vector<int> targets(queries.size());
  std::vector<std::vector<int>> subsets(queries.size());
  for (size_t i = 0; i < queries.size(); ++i) {
    targets[i] = queries[i].target_index;
    subsets[i] = queries[i].subset;
  }
  return compute_recalls(scores, targets, subsets, protocol);
}

double binary_auc(const Vec& values, const std::vector<uint8_t>& labels) {
  const size_t n = values.size();
  if (labels.size() != n) throw InvalidInputError("binary_auc: length mismatch");
  size_t pos = 0;
  for (uint8_t l : labels) pos += l ? 1 : 0;
  const size_t neg = n - pos;
  if (pos == 0 || neg == 0) return 0.5;

  std::vector<int> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return values[a] < values[b]; });

  // Midrank sum of the positive class (Mann-Whitney).
  double rank_sum = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) rank_sum += midrank;
    }
    i = j + 1;
  }
  const double pos_d = static_cast<double>(pos);
  return (rank_sum - pos_d * (pos_d + 1.0) / 2.0) / (pos_d * static_cast<double>(neg));
}

std::vector<int> max_assignment(const Matrix& weight) {
  // Hungarian method with potentials, minimizing cost = -weight.
  // Rows = slots (n), cols = attributes (m), n >= m; assigns one row per col.
  const int n = weight.rows();
  const int m = weight.cols();
  if (n < m) throw InvalidInputError("max_assignment requires rows >= cols");
  const double kInf = std::numeric_limits<double>::infinity();

  std::vector<double> u(m + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int col = 1; col <= m; ++col) {
    p[0] = col;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -weight(j - 1, i0 - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> row_for_col(m, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] > 0) row_for_col[p[j] - 1] = j - 1;
  }
  return row_for_col;
}

MaskAlignmentReport mask_alignment_score(const Matrix& replace_masks,
                                         const std::vector<std::vector<uint8_t>>& changed) {
  const int n = replace_masks.rows();
  const int k = replace_masks.cols();
  if (n < 1 || changed.size() != static_cast<size_t>(n)) {
    throw InvalidInputError("mask_alignment_score: need one label row per query");
  }
  const int a = static_cast<int>(changed[0].size());
  if (k < a) throw InvalidInputError("mask_alignment_score requires K >= A");

  MaskAlignmentReport report;
  report.auc = Matrix(k, a);
  for (int slot = 0; slot < k; ++slot) {
    Vec values(n);
    for (int i = 0; i < n; ++i) values[i] = replace_masks(i, slot);
    for (int attr = 0; attr < a; ++attr) {
      std::vector<uint8_t> labels(n);
      for (int i = 0; i < n; ++i) labels[i] = changed[i][attr];
      report.auc(slot, attr) = binary_auc(values, labels);
    }
  }
  report.slot_for_attribute = max_assignment(report.auc);
  double total = 0.0;
  for (int attr = 0; attr < a; ++attr) {
    total += report.auc(report.slot_for_attribute[attr], attr);
  }
  report.score = total / a;
  return report;
}

namespace {

void teacher_masks_for_query(const Model& model, const Triplet& t,
                             const Matrix& gallery_payloads, Vec& keep, Vec& replace,
                             Vec* student_keep) {
  const int gcols = gallery_payloads.cols();
  Vec ref(gallery_payloads.row(t.reference_index),
          gallery_payloads.row(t.reference_index) + gcols);
  Vec tgt(gallery_payloads.row(t.target_index), gallery_payloads.row(t.target_index) + gcols);
  const Matrix e_ref = model.attribute_matrix({InputKind::kImage, ref});
  const Matrix e_mod = model.attribute_matrix({InputKind::kText, t.text_payload});
  const Matrix e_tgt = model.attribute_matrix({InputKind::kImage, tgt});
  TeacherCompositionTrace tea;
  teacher_compose_forward(model.teacher_keep_head(), model.teacher_replace_head(),
                          model.params().data(), e_tgt, e_ref, e_mod, tea);
  keep = std::move(tea.keep);
  replace = std::move(tea.replace);
  if (student_keep) {
    StudentCompositionTrace stu;
    student_compose_forward(model.student_head(), model.params().data(), e_ref, e_mod, stu);
    *student_keep = std::move(stu.keep);
  }
}

}  // namespace

MaskAlignmentReport mask_alignment_report(const Model& model,
                                          const std::vector<Triplet>& queries,
                                          const Matrix& gallery_payloads, int num_attributes) {
  if (queries.empty()) throw InvalidInputError("mask alignment requires at least one query");
  for (const Triplet& t : queries) {
    if (!t.has_changes) {
      throw InvalidInputError("mask alignment requires synthetic change annotations");
    }
  }
  const int n = static_cast<int>(queries.size());
  const int k = model.attribute_count();
  Matrix replace_masks(n, k);
  std::vector<std::vector<uint8_t>> changed(n, std::vector<uint8_t>(num_attributes, 0));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    const Triplet& t = queries[i];
    Vec keep, replace;
    teacher_masks_for_query(model, t, gallery_payloads, keep, replace, nullptr);
    for (int s = 0; s < k; ++s) replace_masks(i, s) = replace[s];
    for (const auto& [attr, value] : t.changes) changed[i][attr] = 1;
  }
  return mask_alignment_score(replace_masks, changed);
}

MaskDump dump_masks(const Model& model, const std::vector<Triplet>& queries,
                    const Matrix& gallery_payloads) {
  MaskDump dump;
  const int n = static_cast<int>(queries.size());
  dump.student_keep.resize(n);
  dump.teacher_keep.resize(n);
  dump.teacher_replace.resize(n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    teacher_masks_for_query(model, queries[i], gallery_payloads, dump.teacher_keep[i],
                            dump.teacher_replace[i], &dump.student_keep[i]);
  }
  return dump;
}

}  // namespace cir
