#pragma once

#include "cir/common.hpp"
#include "cir/layers.hpp"

namespace cir {

enum class Branch { kStudent, kTeacher };

/// Per-attribute keep/replace gates in [0,1]. The student branch derives
/// replace = 1 - keep; the teacher branch learns both independently.
struct MaskPair {
  Vec keep;
  Vec replace;
  Branch branch = Branch::kStudent;
};

/// Per-row MLP: two attribute rows are concatenated to a 2D input and mapped
/// through 2D -> hidden -> 1, producing one logit per attribute row. The head
/// is shared across rows so the parameter count is independent of K.
struct HeadLayout {
  LinearLayer l1;  // 2D -> hidden
  LinearLayer l2;  // hidden -> 1
  int D = 0;
  int hidden = 0;
  Activation act = Activation::kTanh;
};

struct HeadTrace {
  Matrix pre_hidden;  // K × hidden
  Matrix hidden;      // K × hidden
  Vec logits;         // K
};

/// logits[k] = head([a[k,:], b[k,:]])
void head_forward(const HeadLayout& head, const double* params, const Matrix& a, const Matrix& b,
                  HeadTrace& trace);

/// Accumulates head parameter gradients and the gradients on both input
/// matrices (accumulated into d_a / d_b).
void head_backward(const HeadLayout& head, const double* params, const Matrix& a, const Matrix& b,
                   const HeadTrace& trace, const Vec& d_logits, double* grads, Matrix& d_a,
                   Matrix& d_b);

/// out[k,:] = keep[k] * e_ref[k,:] + replace[k] * e_mod[k,:]
Matrix compose_rows(const Vec& keep, const Vec& replace, const Matrix& e_ref, const Matrix& e_mod);

// --- spec-level loss operations ---------------------------------------------

/// Mean over K of (replace[k] - (1 - keep[k]))². Teacher masks only.
double teacher_mask_regularization(const MaskPair& mask);

/// MSE(keep_s, keep_t) + MSE(replace_s, replace_t). Gradients are routed into
/// the student masks only (callers treat the teacher values as constants).
double composition_distillation_loss(const MaskPair& student, const MaskPair& teacher);

// --- model-path traces -------------------------------------------------------

struct StudentCompositionTrace {
  HeadTrace head;
  Vec keep;         // sigmoid(logits)
  Matrix composed;  // K × D
};

struct TeacherCompositionTrace {
  HeadTrace keep_head;
  HeadTrace replace_head;
  Vec keep;
  Vec replace;
  Matrix composed;  // K × D
};

/// keep = sigmoid(head_s([E_r, E_m])); replace = 1 - keep.
void student_compose_forward(const HeadLayout& head, const double* params, const Matrix& e_ref,
                             const Matrix& e_mod, StudentCompositionTrace& trace);

/// keep = sigmoid(head_t1([E_t, E_r])); replace = sigmoid(head_t2([E_t, E_m])).
void teacher_compose_forward(const HeadLayout& keep_head, const HeadLayout& replace_head,
                             const double* params, const Matrix& e_tgt, const Matrix& e_ref,
                             const Matrix& e_mod, TeacherCompositionTrace& trace);

/// Backward for the student branch. d_keep_direct carries gradients landing
/// on the keep mask itself (e.g. from distillation); d_replace_direct those
/// on the derived replace mask.
void student_compose_backward(const HeadLayout& head, const double* params, const Matrix& e_ref,
                              const Matrix& e_mod, const StudentCompositionTrace& trace,
                              const Matrix& d_composed, const Vec& d_keep_direct,
                              const Vec& d_replace_direct, double* grads, Matrix& d_e_ref,
                              Matrix& d_e_mod);

void teacher_compose_backward(const HeadLayout& keep_head, const HeadLayout& replace_head,
                              const double* params, const Matrix& e_tgt, const Matrix& e_ref,
                              const Matrix& e_mod, const TeacherCompositionTrace& trace,
                              const Matrix& d_composed, const Vec& d_keep_direct,
                              const Vec& d_replace_direct, double* grads, Matrix& d_e_tgt,
                              Matrix& d_e_ref, Matrix& d_e_mod);

}  // namespace cir
