#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "spanret/eval.hpp"
#include "spanret/objective.hpp"

namespace spanret {

struct TrainLogEntry {
    std::size_t step = 0;
    double loss = 0.0;
    double dev_metric = 0.0;
};

struct TrainResult {
    Encoder encoder;
    std::vector<TrainLogEntry> log;
    double best_dev_metric = 0.0;
    std::size_t best_step = 0;
};

// Plain gradient descent over batch_loss_and_grads. The dev metric
// (leave-one-out accuracy for intent, span F1 for slot) is evaluated
// on the initial parameters (step 0) and every eval_interval steps;
// the best-metric parameters are returned, so a run that never beats
// its starting point hands back the initial parameters. With an empty
// dev set the final parameters are returned instead.
inline TrainResult train(const TrainConfig& config, const Dataset& source, const Dataset& dev,
                         Encoder encoder, const DecodeConfig& decode_config = {}) {
    if (config.per_class_batch < 2) throw DataError("per-class batch size must be >= 2");
    if (!(config.learning_rate >= 0.0)) throw DataError("learning rate must be >= 0");
    if (source.examples.empty()) throw DataError("empty training set");
    if (!dev.examples.empty() && dev.task != source.task)
        throw DataError("dev task does not match training task");

    const std::vector<std::string> labels = [&] {
        const auto s = source.label_set();
        return std::vector<std::string>(s.begin(), s.end());
    }();
    if (labels.empty()) throw DataError("training set has no labels");

    const bool use_dev = !dev.examples.empty();
    auto dev_metric = [&](const Encoder& enc) {
        return source.task == Task::Intent
                   ? leave_one_out_accuracy(dev, enc)
                   : leave_one_out_span_f1(dev, enc, decode_config);
    };

    TrainResult result;
    result.encoder = encoder;

    Rng rng(config.seed);
    double best = -1.0;
    if (use_dev) {
        best = dev_metric(encoder);
        result.best_dev_metric = best;
        result.best_step = 0;
    }
    std::size_t evals_since_best = 0;
    for (std::size_t step = 1; step <= config.max_steps; ++step) {
        const TrainBatch batch =
            sample_batch(source, labels, config.per_class_batch, rng);
        BatchResult r = batch_loss_and_grads(encoder.params, batch, config.reduction);
        if (!std::isfinite(r.loss))
            throw NumericError("non-finite loss at step " + std::to_string(step));
        apply_gradients(encoder.params, r.grads, config.learning_rate);

        if (use_dev && (step % config.eval_interval == 0 || step == config.max_steps)) {
            const double metric = dev_metric(encoder);
            result.log.push_back({step, r.loss, metric});
            if (metric > best) {
                best = metric;
                result.encoder = encoder;
                result.best_dev_metric = metric;
                result.best_step = step;
                evals_since_best = 0;
            } else if (++evals_since_best >= config.early_stop_patience) {
                break;
            }
        } else if (!use_dev) {
            if (step % config.eval_interval == 0 || step == config.max_steps)
                result.log.push_back({step, r.loss, 0.0});
        }
    }
    if (!use_dev) result.encoder = std::move(encoder);
    return result;
}

}  // namespace spanret
