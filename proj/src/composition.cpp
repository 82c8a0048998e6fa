#include "cir/composition.hpp"

namespace cir {

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInputError(std::string(what) + ": attribute matrices must share K and D");
  }
}

}  // namespace

void head_forward(const HeadLayout& head, const double* params, const Matrix& a, const Matrix& b,
                  HeadTrace& trace) {
  check_same_shape(a, b, "head_forward");
  if (a.cols() != head.D) throw InvalidInputError("head_forward: unexpected attribute dim");
  const int K = a.rows(), D = head.D, H = head.hidden;

  trace.pre_hidden = Matrix(K, H);
  trace.hidden = Matrix(K, H);
  trace.logits.resize(K);

  Vec input(2 * D);
  for (int k = 0; k < K; ++k) {
    std::copy(a.row(k), a.row(k) + D, input.begin());
    std::copy(b.row(k), b.row(k) + D, input.begin() + D);
    head.l1.forward(params, input.data(), trace.pre_hidden.row(k));
    double* h = trace.hidden.row(k);
    for (int i = 0; i < H; ++i) h[i] = activate(head.act, trace.pre_hidden(k, i));
    double logit;
    head.l2.forward(params, h, &logit);
    trace.logits[k] = logit;
  }
}

void head_backward(const HeadLayout& head, const double* params, const Matrix& a, const Matrix& b,
                   const HeadTrace& trace, const Vec& d_logits, double* grads, Matrix& d_a,
                   Matrix& d_b) {
  const int K = a.rows(), D = head.D, H = head.hidden;
  Vec input(2 * D);
  Vec d_input(2 * D);
  Vec d_hidden(H);
  Vec d_pre(H);
  for (int k = 0; k < K; ++k) {
    const double dz = d_logits[k];
    if (dz == 0.0) continue;
    std::copy(a.row(k), a.row(k) + D, input.begin());
    std::copy(b.row(k), b.row(k) + D, input.begin() + D);
    std::fill(d_hidden.begin(), d_hidden.end(), 0.0);
    head.l2.backward(params, trace.hidden.row(k), &dz, grads, d_hidden.data());
    for (int i = 0; i < H; ++i) {
      d_pre[i] = d_hidden[i] * activate_grad(head.act, trace.pre_hidden(k, i));
    }
    std::fill(d_input.begin(), d_input.end(), 0.0);
    head.l1.backward(params, input.data(), d_pre.data(), grads, d_input.data());
    double* da = d_a.row(k);
    double* db = d_b.row(k);
    for (int d = 0; d < D; ++d) {
      da[d] += d_input[d];
      db[d] += d_input[D + d];
    }
  }
}

Matrix compose_rows(const Vec& keep, const Vec& replace, const Matrix& e_ref,
                    const Matrix& e_mod) {
  check_same_shape(e_ref, e_mod, "compose_rows");
  const int K = e_ref.rows(), D = e_ref.cols();
  if (static_cast<int>(keep.size()) != K || static_cast<int>(replace.size()) != K) {
    throw InvalidInputError("compose_rows: mask length must equal K");
  }
  Matrix out(K, D);
  for (int k = 0; k < K; ++k) {
    const double* r = e_ref.row(k);
    const double* m = e_mod.row(k);
    double* o = out.row(k);
    for (int d = 0; d < D; ++d) o[d] = keep[k] * r[d] + replace[k] * m[d];
  }
  return out;
}

double teacher_mask_regularization(const MaskPair& mask) {
  if (mask.branch != Branch::kTeacher) {
    throw InvalidInputError("teacher_mask_regularization expects a teacher mask pair");
  }
  const size_t K = mask.keep.size();
  double acc = 0.0;
  for (size_t k = 0; k < K; ++k) {
    const double diff = mask.replace[k] - (1.0 - mask.keep[k]);
    acc += diff * diff;
  }
  return acc / static_cast<double>(K);
}

double composition_distillation_loss(const MaskPair& student, const MaskPair& teacher) {
  if (student.branch != Branch::kStudent || teacher.branch != Branch::kTeacher) {
    throw InvalidInputError("composition_distillation_loss expects (student, teacher)");
  }
  if (student.keep.size() != teacher.keep.size()) {
    throw InvalidInputError("composition_distillation_loss: mask lengths differ");
  }
  const size_t K = student.keep.size();
  double keep_mse = 0.0, replace_mse = 0.0;
  for (size_t k = 0; k < K; ++k) {
    const double dk = teacher.keep[k] - student.keep[k];
    const double dr = teacher.replace[k] - student.replace[k];
    keep_mse += dk * dk;
    replace_mse += dr * dr;
  }
  return (keep_mse + replace_mse) / static_cast<double>(K);
}

void student_compose_forward(const HeadLayout& head, const double* params, const Matrix& e_ref,
                             const Matrix& e_mod, StudentCompositionTrace& trace) {
  head_forward(head, params, e_ref, e_mod, trace.head);
  const int K = e_ref.rows();
  trace.keep.resize(K);
  for (int k = 0; k < K; ++k) trace.keep[k] = sigmoid(trace.head.logits[k]);
  Vec replace(K);
  for (int k = 0; k < K; ++k) replace[k] = 1.0 - trace.keep[k];
  trace.composed = compose_rows(trace.keep, replace, e_ref, e_mod);
}

void teacher_compose_forward(const HeadLayout& keep_head, const HeadLayout& replace_head,
                             const double* params, const Matrix& e_tgt, const Matrix& e_ref,
                             const Matrix& e_mod, TeacherCompositionTrace& trace) {
  head_forward(keep_head, params, e_tgt, e_ref, trace.keep_head);
  head_forward(replace_head, params, e_tgt, e_mod, trace.replace_head);
  const int K = e_ref.rows();
  trace.keep.resize(K);
  trace.replace.resize(K);
  for (int k = 0; k < K; ++k) {
    trace.keep[k] = sigmoid(trace.keep_head.logits[k]);
    trace.replace[k] = sigmoid(trace.replace_head.logits[k]);
  }
  trace.composed = compose_rows(trace.keep, trace.replace, e_ref, e_mod);
}

void student_compose_backward(const HeadLayout& head, const double* params, const Matrix& e_ref,
                              const Matrix& e_mod, const StudentCompositionTrace& trace,
                              const Matrix& d_composed, const Vec& d_keep_direct,
                              const Vec& d_replace_direct, double* grads, Matrix& d_e_ref,
                              Matrix& d_e_mod) {
  const int K = e_ref.rows(), D = e_ref.cols();
  Vec d_logits(K, 0.0);
  for (int k = 0; k < K; ++k) {
    const double keep = trace.keep[k];
    double d_keep = d_keep_direct.empty() ? 0.0 : d_keep_direct[k];
    // replace = 1 - keep
    if (!d_replace_direct.empty()) d_keep -= d_replace_direct[k];
    if (!d_composed.empty()) {
      const double* dc = d_composed.row(k);
      const double* r = e_ref.row(k);
      const double* m = e_mod.row(k);
      double* dr = d_e_ref.row(k);
      double* dm = d_e_mod.row(k);
      for (int d = 0; d < D; ++d) {
        d_keep += dc[d] * (r[d] - m[d]);
        dr[d] += keep * dc[d];
        dm[d] += (1.0 - keep) * dc[d];
      }
    }
    d_logits[k] = d_keep * keep * (1.0 - keep);
  }
  head_backward(head, params, e_ref, e_mod, trace.head, d_logits, grads, d_e_ref, d_e_mod);
}

void teacher_compose_backward(const HeadLayout& keep_head, const HeadLayout& replace_head,
                              const double* params, const Matrix& e_tgt, const Matrix& e_ref,
                              const Matrix& e_mod, const TeacherCompositionTrace& trace,
                              const Matrix& d_composed, const Vec& d_keep_direct,
                              const Vec& d_replace_direct, double* grads, Matrix& d_e_tgt,
                              Matrix& d_e_ref, Matrix& d_e_mod) {
  const int K = e_ref.rows(), D = e_ref.cols();
  Vec d_keep_logits(K, 0.0), d_replace_logits(K, 0.0);
  for (int k = 0; k < K; ++k) {
    double d_keep = d_keep_direct.empty() ? 0.0 : d_keep_direct[k];
    double d_replace = d_replace_direct.empty() ? 0.0 : d_replace_direct[k];
    if (!d_composed.empty()) {
      const double* dc = d_composed.row(k);
      const double* r = e_ref.row(k);
      const double* m = e_mod.row(k);
      double* dr = d_e_ref.row(k);
      double* dm = d_e_mod.row(k);
      for (int d = 0; d < D; ++d) {
        d_keep += dc[d] * r[d];
        d_replace += dc[d] * m[d];
        dr[d] += trace.keep[k] * dc[d];
        dm[d] += trace.replace[k] * dc[d];
      }
    }
    d_keep_logits[k] = d_keep * trace.keep[k] * (1.0 - trace.keep[k]);
    d_replace_logits[k] = d_replace * trace.replace[k] * (1.0 - trace.replace[k]);
  }
  head_backward(keep_head, params, e_tgt, e_ref, trace.keep_head, d_keep_logits, grads, d_e_tgt,
                d_e_ref);
  head_backward(replace_head, params, e_tgt, e_mod, trace.replace_head, d_replace_logits, grads,
                d_e_tgt, d_e_mod);
}

}  // namespace cir
