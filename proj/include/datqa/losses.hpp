#pragma once

#include <vector>

#include "datqa/errors.hpp"
#include "datqa/model.hpp"
#include "datqa/rng.hpp"
#include "datqa/tape.hpp"

namespace datqa {

struct LossBreakdown {
    double task = 0.0;
    double adv = 0.0;
    double lambda = 0.0;
    double total = 0.0;
};

// Multi-task objective: mean GNLL over the batch plus lambda times the mean
// domain cross-entropy, the latter flowing through the gradient reversal
// layer. lambda = 0 omits the adversarial branch from the tape entirely, so a
// task-only run and a lambda-0 run produce bit-identical gradients.
inline int batch_objective(Tape& t, const Binding& b, const ModelConfig& c,
                           const std::vector<Array>& xs, const std::vector<Array>& ys,
                           const std::vector<size_t>& domain_labels, double lambda, bool train_mode,
                           Rng* drop_rng, LossBreakdown* breakdown = nullptr) {
    if (xs.empty()) throw Error("batch_objective: empty batch");
    if (ys.size() != xs.size()) throw Error("batch_objective: target count does not match batch");
    const bool adversarial = lambda > 0.0;
    if (adversarial && domain_labels.size() != xs.size())
        throw Error("batch_objective: domain labels do not align with batch");
    if (lambda < 0.0) throw Error("batch_objective: lambda must be >= 0");

    const size_t n = xs.size();
    int task_sum = -1;
    int adv_sum = -1;
    for (size_t i = 0; i < n; ++i) {
        int x = t.leaf(xs[i]);
        int h = encode_on_tape(t, b, c, x, train_mode, drop_rng);
        QualityNodes q = quality_head_on_tape(t, b, c, h);
        int li = t.gnll(q.m, q.chol, ys[i]);
        task_sum = (task_sum < 0) ? li : t.add(task_sum, li);
        if (adversarial) {
            int logits = domain_head_on_tape(t, b, c, h);
            int ce = t.softmax_ce(logits, domain_labels[i]);
            adv_sum = (adv_sum < 0) ? ce : t.add(adv_sum, ce);
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    int task_mean = t.scale(task_sum, inv_n);
    int total = task_mean;
    double adv_value = 0.0;
    if (adversarial) {
        int adv_mean = t.scale(adv_sum, inv_n);
        adv_value = t.value(adv_mean).data[0];
        total = t.add(task_mean, t.scale(adv_mean, lambda));
    }
    if (breakdown) {
        breakdown->task = t.value(task_mean).data[0];
        breakdown->adv = adv_value;
        breakdown->lambda = lambda;
        breakdown->total = t.value(total).data[0];
    }
    return total;
}

}  // namespace datqa
