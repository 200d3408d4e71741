#include "soapkd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "soapkd/optim.hpp"
#include "soapkd/serialize.hpp"

namespace soapkd {

double model_mae_degrees(RegressionModel<float>& model,
                         const std::vector<ImageSample>& set, bool circular) {
    if (set.empty()) throw DataError("model_mae_degrees: empty set");
    std::vector<double> preds;
    preds.reserve(set.size());
    std::vector<AngleLabel> truths;
    truths.reserve(set.size());
    const int chunk = 64;
    std::vector<int> idx;
    for (std::size_t at = 0; at < set.size(); at += chunk) {
        const std::size_t take = std::min(std::size_t(chunk), set.size() - at);
        idx.resize(take);
        std::iota(idx.begin(), idx.end(), int(at));
        Tensorf batch = make_batch(set, idx);
        auto out = model.forward(batch, false);
        for (std::size_t i = 0; i < take; ++i) {
            preds.push_back(double(out.predictions.at(int(i), 0)));
            truths.push_back(set[at + i].label);
        }
    }
    // evaluation-time predictions wrap into [0, 180)
    std::vector<double> wrapped(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i)
        wrapped[i] = wrap_degrees(preds[i] * 180.0) / 180.0;
    return [&] {
        double total = 0;
        for (std::size_t i = 0; i < wrapped.size(); ++i) {
            const double pd = wrapped[i] * 180.0;
            total += circular ? circular_distance_degrees(pd, truths[i].degrees)
                              : std::fabs(pd - truths[i].degrees);
        }
        return total / double(wrapped.size());
    }();
}

namespace {

// Exact-label geometric augmentations on square images. k in [0, 4):
// identity, x-flip (theta -> 180 - theta), 90-degree rotation
// (theta -> theta + 90), flip of the rotation (theta -> 90 - theta).
void augment_square(Tensorf& chw, double& label_normalized, int k) {
    if (k == 0) return;
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    Tensorf out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < h; ++r)
            for (int col = 0; col < w; ++col) {
                float v;
                switch (k) {
                    case 1: v = chw.at3(ch, r, w - 1 - col); break;         // x-flip
                    case 2: v = chw.at3(ch, col, h - 1 - r); break;         // rot90
                    default: v = chw.at3(ch, w - 1 - col, h - 1 - r); break;
                }
                out.at3(ch, r, col) = v;
            }
    chw = std::move(out);
    const double deg = label_normalized * 180.0;
    double new_deg = deg;
    switch (k) {
        case 1: new_deg = 180.0 - deg; break;
        case 2: new_deg = deg + 90.0; break;
        default: new_deg = 90.0 - deg; break;
    }
    label_normalized = wrap_degrees(new_deg) / 180.0;
}

}  // namespace

RunRecord train_teacher(RegressionModel<float>& teacher,
                        const std::vector<ImageSample>& train_set,
                        const TrainSchedule& schedule, std::uint64_t seed) {
    if (train_set.empty()) throw DataError("train_teacher: empty dataset");
    Rng rng(seed);
    SGD<float> opt(teacher.net().params(), schedule.lr0, schedule.momentum,
                   schedule.weight_decay);
    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    RunRecord record;
    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        const double lr = scheduled_lr(schedule.lr0, schedule.lr_decay_factor,
                                       schedule.lr_decay_epochs, epoch);
        opt.set_lr(lr);
        rng.shuffle(order);
        double epoch_loss = 0;
        int batches = 0;
        for (std::size_t at = 0; at < order.size();
             at += std::size_t(schedule.batch_size)) {
            const std::size_t take =
                std::min(std::size_t(schedule.batch_size), order.size() - at);
            std::vector<int> idx(order.begin() + long(at),
                                 order.begin() + long(at + take));
            Tensorf batch = make_batch(train_set, idx);
            auto labels = batch_labels_normalized(train_set, idx);
            if (schedule.augment) {
                const int img_numel = int(train_set[0].pixels.numel());
                for (std::size_t i = 0; i < take; ++i) {
                    const int k = int(rng.below(4));
                    if (k == 0) continue;
                    Tensorf img = train_set[std::size_t(idx[i])].pixels;
                    double lab = labels[i];
                    augment_square(img, lab, k);
                    std::copy_n(img.data(), img_numel,
                                batch.data() + i * std::size_t(img_numel));
                    labels[i] = float(lab);
                }
            }

            teacher.net().zero_grad();
            auto out = teacher.forward(batch, true);
            const int n = int(take);
            Tensorf dpred({n, 1});
            double loss = 0;
            for (int i = 0; i < n; ++i) {
                const double err =
                    double(out.predictions.at(i, 0)) - double(labels[size_t(i)]);
                loss += err * err;
                dpred.at(i, 0) = float(2.0 * err / n);
            }
            teacher.backward(dpred);
            opt.step();
            epoch_loss += loss / n;
            ++batches;
        }
        record.epoch_loss.push_back(epoch_loss / std::max(1, batches));
        record.epoch_lr.push_back(lr);
    }
    record.final_train_mae = model_mae_degrees(teacher, train_set);
    return record;
}

RunRecord train_student(RegressionModel<float>& student,
                        const std::vector<ImageSample>& train_set,
                        const std::vector<FakeSample>& refined_pool,
                        RegressionModel<float>& teacher, Adapter<float>& adapter,
                        double lambda, const TrainSchedule& schedule,
                        std::uint64_t seed) {
    if (train_set.empty()) throw DataError("train_student: empty dataset");
    if (!teacher.frozen())
        throw ContractViolation("train_student: teacher must be frozen");
    if (lambda < 0) throw DataError("train_student: lambda must be >= 0");

    // Usable fakes are the refinery survivors. A pool that never went
    // through subsampling/filtering is a contract violation.
    std::vector<const FakeSample*> usable;
    for (const auto& s : refined_pool) {
        if (!s.has_dr() || !s.has_teacher_pred())
            throw ContractViolation(
                "train_student: fake pool is unrefined (missing kept flags)");
        if (s.kept_by_filtering) usable.push_back(&s);
    }

    const std::uint64_t teacher_before = teacher.fingerprint();
    Rng rng(seed);
    std::vector<Param<float>*> trainable = student.net().params();
    const bool use_kd = lambda > 0;
    if (use_kd)
        for (auto* p : adapter.params()) trainable.push_back(p);
    SGD<float> opt(trainable, schedule.lr0, schedule.momentum, schedule.weight_decay);

    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    const int img_numel = int(train_set[0].pixels.numel());
    RunRecord record;
    record.lambda = lambda;
    record.fake_pool_used = int(usable.size());

    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        const double lr = scheduled_lr(schedule.lr0, schedule.lr_decay_factor,
                                       schedule.lr_decay_epochs, epoch);
        opt.set_lr(lr);
        rng.shuffle(order);
        double epoch_loss = 0;
        int batches = 0;
        for (std::size_t at = 0; at < order.size();
             at += std::size_t(schedule.batch_size)) {
            const std::size_t take =
                std::min(std::size_t(schedule.batch_size), order.size() - at);
            const int n_real = int(take);
            // fake:real 1:1, capped by the refined pool, with replacement
            const int n_fake = usable.empty() ? 0 : std::min(n_real, int(usable.size()));

            Tensorf batch({n_real + n_fake, train_set[0].pixels.dim(0),
                           train_set[0].pixels.dim(1), train_set[0].pixels.dim(2)});
            std::vector<float> y_real(static_cast<std::size_t>(n_real));
            for (int i = 0; i < n_real; ++i) {
                const ImageSample& s = train_set[std::size_t(order[at + std::size_t(i)])];
                std::copy_n(s.pixels.data(), img_numel,
                            batch.data() + std::size_t(i) * img_numel);
                y_real[std::size_t(i)] = float(s.label.normalized());
            }
            for (int i = 0; i < n_fake; ++i) {
                const FakeSample& s = *usable[std::size_t(rng.below(usable.size()))];
                std::copy_n(s.image.data(), img_numel,
                            batch.data() + std::size_t(n_real + i) * img_numel);
            }

            student.net().zero_grad();
            if (use_kd) adapter.zero_grad();
            auto s_out = student.forward(batch, true);
            const bool need_teacher = use_kd || n_fake > 0;
            RegressionModel<float>::Output t_out;
            if (need_teacher) t_out = teacher.forward(batch, false);  // constants

            // regression term on predictions
            std::vector<float> preds_real(static_cast<std::size_t>(n_real)),
                preds_fake(static_cast<std::size_t>(n_fake)), teacher_fake(static_cast<std::size_t>(n_fake));
            for (int i = 0; i < n_real; ++i)
                preds_real[std::size_t(i)] = s_out.predictions.at(i, 0);
            for (int i = 0; i < n_fake; ++i) {
                preds_fake[std::size_t(i)] = s_out.predictions.at(n_real + i, 0);
                teacher_fake[std::size_t(i)] = t_out.predictions.at(n_real + i, 0);
            }
            auto reg = loss_reg<float>(preds_real, y_real, preds_fake, teacher_fake);

            const float scale = 1.0f / float(n_real + n_fake);
            Tensorf dpred({n_real + n_fake, 1});
            for (int i = 0; i < n_real; ++i)
                dpred.at(i, 0) = reg.grad_real[std::size_t(i)] * scale;
            for (int i = 0; i < n_fake; ++i)
                dpred.at(n_real + i, 0) = reg.grad_fake[std::size_t(i)] * scale;

            double total_loss = double(reg.value);
            if (use_kd) {
                Tensorf adapted = adapter.forward(s_out.features, true);
                auto kd = loss_kd<float>(t_out.features, adapted, Tensorf(), Tensorf());
                total_loss += lambda * double(kd.value);
                kd.grad_real.scale(float(lambda) * scale);
                Tensorf dfeat = adapter.backward(kd.grad_real);
                student.backward(dpred, &dfeat);
            } else {
                student.backward(dpred);
            }
            opt.step();
            epoch_loss += total_loss * scale;
            ++batches;
        }
        record.epoch_loss.push_back(epoch_loss / std::max(1, batches));
        record.epoch_lr.push_back(lr);
    }

    if (teacher.fingerprint() != teacher_before)
        throw ContractViolation("train_student: teacher changed during distillation");
    record.final_train_mae = model_mae_degrees(student, train_set);
    return record;
}

std::size_t select_lambda_index(const std::vector<double>& candidates,
                                const std::vector<double>& val_maes) {
    if (candidates.empty() || candidates.size() != val_maes.size())
        throw DataError("select_lambda: candidate/mae length mismatch");
    std::size_t best = 0;
    for (std::size_t i = 1; i < val_maes.size(); ++i)
        if (val_maes[i] < val_maes[best]) best = i;  // ties keep the smaller lambda
    return best;
}

GridSearchResult grid_search_lambda(const std::vector<double>& candidates,
                                    const std::vector<ImageSample>& train_set,
                                    const std::vector<ImageSample>& val_set,
                                    RegressionModel<float>& teacher,
                                    const NetworkSpec& student_spec,
                                    const HeadWidths& student_head,
                                    const TrainSchedule& schedule, std::uint64_t seed) {
    if (candidates.empty()) throw DataError("grid_search_lambda: no candidates");
    if (val_set.empty()) throw DataError("grid_search_lambda: empty validation set");

    GridSearchResult result;
    result.candidates = candidates;
    const std::vector<FakeSample> no_fakes;  // grid search excludes fake images
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        const std::uint64_t run_seed = Rng(seed).fork(k).next_u64();
        RegressionModel<float> student(student_spec, student_head, run_seed);
        Adapter<float> adapter = build_adapter<float>(student_spec,
                                                      teacher.backbone_spec(), run_seed);
        train_student(student, train_set, no_fakes, teacher, adapter, candidates[k],
                      schedule, run_seed);
        result.val_maes.push_back(model_mae_degrees(student, val_set));
    }
    result.best_lambda = candidates[select_lambda_index(candidates, result.val_maes)];
    return result;
}

void save_model(const std::string& path, RegressionModel<float>& model,
                std::uint64_t seed, const std::string& role) {
    nlohmann::json meta;
    meta["kind"] = "regression_model";
    meta["role"] = role;
    meta["spec"] = to_text(model.backbone_spec());
    meta["head"] = model.head();
    meta["seed"] = seed;
    std::vector<const Tensorf*> tensors;
    for (auto* t : model.net().state_tensors()) tensors.push_back(t);
    save_checkpoint(path, meta, tensors);
}

RegressionModel<float> load_model(const std::string& path) {
    const nlohmann::json meta = load_checkpoint_meta(path);
    if (meta.value("kind", "") != "regression_model")
        throw DataError("not a regression model checkpoint: " + path);
    const NetworkSpec spec = spec_from_text(meta.at("spec").get<std::string>());
    const auto head_vec = meta.at("head").get<std::vector<int>>();
    RegressionModel<float> model(spec, {head_vec[0], head_vec[1], head_vec[2]}, 0);
    std::vector<Tensorf*> tensors;
    for (auto* t : model.net().state_tensors()) tensors.push_back(t);
    load_checkpoint_tensors(path, tensors);
    return model;
}

}  // namespace soapkd
