#pragma once

#include <string>
#include <vector>

#include "soapkd/ccgan.hpp"
#include "soapkd/config.hpp"
#include "soapkd/data.hpp"
#include "soapkd/model.hpp"

namespace soapkd {

// Feature guidance loss: sum over real and fake samples of the squared L2
// distance between teacher features and adapted student features. Teacher
// features are constants. grad_* are d/d(adapted student features).
template <class T>
struct KdLossResult {
    T value = T(0);
    Tensor<T> grad_real;
    Tensor<T> grad_fake;
};

template <class T>
KdLossResult<T> loss_kd(const Tensor<T>& teacher_real, const Tensor<T>& adapted_real,
                        const Tensor<T>& teacher_fake, const Tensor<T>& adapted_fake) {
    KdLossResult<T> out;
    auto accumulate = [&out](const Tensor<T>& target, const Tensor<T>& pred,
                             Tensor<T>& grad) {
        if (pred.empty()) return;
        if (!target.same_shape(pred))
            throw ContractViolation("loss_kd: feature shapes differ after adapter");
        grad.resize(pred.dims());
        for (std::size_t i = 0; i < pred.numel(); ++i) {
            const T diff = pred[i] - target[i];
            out.value += diff * diff;
            grad[i] = T(2) * diff;
        }
    };
    accumulate(teacher_real, adapted_real, out.grad_real);
    accumulate(teacher_fake, adapted_fake, out.grad_fake);
    return out;
}

// Regression loss: squared error against ground truth on real samples plus
// squared error against teacher pseudo-labels on fake samples. Teacher
// predictions are constants; conditioning labels never appear.
template <class T>
struct RegLossResult {
    T value = T(0);
    std::vector<T> grad_real;  // d/d f_s(x_r)
    std::vector<T> grad_fake;  // d/d f_s(x_g)
};

template <class T>
RegLossResult<T> loss_reg(const std::vector<T>& student_preds_real,
                          const std::vector<T>& y_real,
                          const std::vector<T>& student_preds_fake,
                          const std::vector<T>& teacher_preds_fake) {
    if (student_preds_real.size() != y_real.size() ||
        student_preds_fake.size() != teacher_preds_fake.size())
        throw DataError("loss_reg: operand length mismatch");
    RegLossResult<T> out;
    out.grad_real.resize(student_preds_real.size());
    out.grad_fake.resize(student_preds_fake.size());
    for (std::size_t i = 0; i < y_real.size(); ++i) {
        const T diff = student_preds_real[i] - y_real[i];
        out.value += diff * diff;
        out.grad_real[i] = T(2) * diff;
    }
    for (std::size_t i = 0; i < student_preds_fake.size(); ++i) {
        const T diff = student_preds_fake[i] - teacher_preds_fake[i];
        out.value += diff * diff;
        out.grad_fake[i] = T(2) * diff;
    }
    return out;
}

template <class T>
T loss_total(T reg, T kd, T lambda) {
    if (lambda < T(0)) throw DataError("loss_total: lambda must be >= 0");
    return reg + lambda * kd;
}

struct RunRecord {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_lr;
    double final_train_mae = -1.0;
    double val_mae = -1.0;
    double lambda = 0.0;
    int fake_pool_used = 0;
};

// Mean validation-style MAE of a model over a sample list, in degrees.
double model_mae_degrees(RegressionModel<float>& model,
                         const std::vector<ImageSample>& set, bool circular = true);

// Teacher training: squared error on normalized labels under the step-decay
// schedule.
RunRecord train_teacher(RegressionModel<float>& teacher,
                        const std::vector<ImageSample>& train_set,
                        const TrainSchedule& schedule, std::uint64_t seed);

// Student training minimizing L_reg + lambda * L_kd over batches mixing
// real samples with refined fakes 1:1 (fakes drawn with replacement).
// Passing an empty pool and lambda = 0 is the plain-regression baseline.
// The teacher must be frozen; its parameters are asserted unchanged.
RunRecord train_student(RegressionModel<float>& student,
                        const std::vector<ImageSample>& train_set,
                        const std::vector<FakeSample>& refined_pool,
                        RegressionModel<float>& teacher, Adapter<float>& adapter,
                        double lambda, const TrainSchedule& schedule,
                        std::uint64_t seed);

// Pure selection rule: index of the smallest MAE, ties toward the smaller
// lambda (candidates assumed ascending).
std::size_t select_lambda_index(const std::vector<double>& candidates,
                                const std::vector<double>& val_maes);

struct GridSearchResult {
    double best_lambda = 0.0;
    std::vector<double> candidates;
    std::vector<double> val_maes;
};

// Trains one student per candidate without fake images and picks the
// validation-MAE minimizer. Per-candidate seeds derive from (seed, index).
GridSearchResult grid_search_lambda(const std::vector<double>& candidates,
                                    const std::vector<ImageSample>& train_set,
                                    const std::vector<ImageSample>& val_set,
                                    RegressionModel<float>& teacher,
                                    const NetworkSpec& student_spec,
                                    const HeadWidths& student_head,
                                    const TrainSchedule& schedule, std::uint64_t seed);

// Model checkpoints (spec text + head + seed embedded).
void save_model(const std::string& path, RegressionModel<float>& model,
                std::uint64_t seed, const std::string& role);
RegressionModel<float> load_model(const std::string& path);

}  // namespace soapkd
