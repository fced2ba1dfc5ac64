#include "stripmlp/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace stripmlp::train {

namespace ag = autograd;
using nlohmann::json;

void OptimState::initialize(const ParamStore& store) {
    m.assign(store.entries().size(), Tensor());
    v.assign(store.entries().size(), Tensor());
    for (std::size_t i = 0; i < store.entries().size(); ++i) {
        const ParamEntry& e = store.entries()[i];
        if (e.trainable) {
            m[i] = Tensor::zeros(e.var->value.shape());
            v[i] = Tensor::zeros(e.var->value.shape());
        }
    }
    step = 0;
}

void adamw_step(ParamStore& store, OptimState& state, double lr) {
    if (!state.initialized()) {
        state.initialize(store);
    }
    if (state.m.size() != store.entries().size()) {
        throw UsageError("optimizer state does not match the parameter store");
    }
    state.step += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

    double clip_factor = 1.0;
    if (state.cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (const ParamEntry& e : store.entries()) {
            if (e.trainable && e.var->has_grad) {
                const double* g = e.var->grad.data();
                for (Index i = 0; i < e.var->grad.numel(); ++i) {
                    sq += g[i] * g[i];
                }
            }
        }
        const double norm = std::sqrt(sq);
        if (norm > state.cfg.clip_norm) {
            clip_factor = state.cfg.clip_norm / norm;
        }
    }

    for (std::size_t i = 0; i < store.entries().size(); ++i) {
        ParamEntry& e = store.entries()[i];
        if (!e.trainable) {
            continue;
        }
        const Index n = e.var->value.numel();
        Tensor theta = e.var->value.clone();
        double* t = theta.mut();
        if (e.decay && state.cfg.weight_decay != 0.0) {
            const double keep = 1.0 - lr * state.cfg.weight_decay;
            for (Index k = 0; k < n; ++k) {
                t[k] *= keep;
            }
        }
        double* pm = state.m[i].mut();
        double* pv = state.v[i].mut();
        const double* g = e.var->has_grad ? e.var->grad.data() : nullptr;
        for (Index k = 0; k < n; ++k) {
            const double gk = (g != nullptr ? g[k] : 0.0) * clip_factor;
            pm[k] = b1 * pm[k] + (1.0 - b1) * gk;
            pv[k] = b2 * pv[k] + (1.0 - b2) * gk * gk;
            const double mhat = pm[k] / bc1;
            const double vhat = pv[k] / bc2;
            t[k] -= lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
        }
        theta.ensure_finite("adamw_step(" + e.name + ")");
        e.var->value = theta;
    }
}

void Schedule::validate() const {
    if (warmup_epochs >= total_epochs) {
        throw ConfigError("warmup epochs must be smaller than total epochs");
    }
    if (base_lr <= 0.0 || min_lr < 0.0 || warmup_start_lr < 0.0) {
        throw ConfigError("learning rates must be positive");
    }
}

double lr_at(const Schedule& sched, Index step, Index steps_per_epoch) {
    if (step < 0 || steps_per_epoch < 1) {
        throw UsageError("lr_at needs step >= 0 and steps_per_epoch >= 1");
    }
    const double warm_steps =
        static_cast<double>(sched.warmup_epochs) * static_cast<double>(steps_per_epoch);
    const double total_steps =
        static_cast<double>(sched.total_epochs) * static_cast<double>(steps_per_epoch);
    const double s = static_cast<double>(step);
    if (warm_steps > 0.0 && s < warm_steps) {
        return sched.warmup_start_lr + (sched.base_lr - sched.warmup_start_lr) * s / warm_steps;
    }
    double progress = (total_steps > warm_steps)
                          ? (s - warm_steps) / (total_steps - warm_steps)
                          : 1.0;
    progress = std::clamp(progress, 0.0, 1.0);
    return sched.min_lr + (sched.base_lr - sched.min_lr) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

namespace {

int argmax_row(const double* row, Index k) {
    int best = 0;
    for (Index j = 1; j < k; ++j) {
        if (row[j] > row[best]) {
            best = static_cast<int>(j);
        }
    }
    return best;
}

std::uint64_t mix_seed(std::uint64_t seed, Index epoch, Index batch) {
    std::uint64_t h = seed;
    h ^= 0x9E3779B97F4A7C15ull + (static_cast<std::uint64_t>(epoch) << 17);
    h *= 0xBF58476D1CE4E5B9ull;
    h ^= static_cast<std::uint64_t>(batch) + (h >> 31);
    h *= 0x94D049BB133111EBull;
    return h;
}

}  // namespace

double evaluate_logits(const std::function<Tensor(const Tensor&)>& logits_fn,
                       const data::Dataset& ds, Index batch_size,
                       const data::Normalization& norm) {
    Index correct = 0;
    std::mt19937_64 rng(0);  // unused: evaluation never augments
    const data::AugmentPolicy none;
    for (Index at = 0; at < ds.size(); at += batch_size) {
        const Index end = std::min<Index>(at + batch_size, ds.size());
        std::vector<Index> idx;
        for (Index i = at; i < end; ++i) {
            idx.push_back(i);
        }
        data::Batch batch = data::make_batch(ds, idx, none, rng, norm);
        Tensor logits = logits_fn(batch.images);
        const Index classes = logits.dim(1);
        for (Index i = 0; i < logits.dim(0); ++i) {
            if (argmax_row(logits.data() + i * classes, classes) ==
                batch.labels[static_cast<std::size_t>(i)]) {
                ++correct;
            }
        }
    }
    return ds.size() > 0 ? static_cast<double>(correct) / static_cast<double>(ds.size()) : 0.0;
}

double evaluate(const StripMlpModel& model, const data::Dataset& ds, Index batch_size,
                const data::Normalization& norm) {
    return evaluate_logits([&model](const Tensor& images) { return model.logits(images); },
                           ds, batch_size, norm);
}

TrainResult train(StripMlpModel& model, const data::Dataset& train_set,
                  const Schedule& sched, const OptimConfig& optim, const RunSettings& run) {
    sched.validate();
    if (train_set.size() < 1) {
        throw ConfigError("empty training set");
    }
    OptimState state;
    state.cfg = optim;
    state.initialize(model.store);

    const Index steps_per_epoch =
        (train_set.size() + run.batch_size - 1) / run.batch_size;

    std::ofstream metrics;
    const bool persist = !run.out_dir.empty();
    if (persist) {
        std::filesystem::create_directories(run.out_dir);
        metrics.open(run.out_dir + "/metrics.jsonl", std::ios::trunc);
        if (!metrics) {
            throw IoError("cannot open metrics log in " + run.out_dir);
        }
    }

    TrainResult result;
    Index global_step = 0;
    bool done = false;
    for (Index epoch = 0; epoch < run.epochs && !done; ++epoch) {
        const auto batches =
            data::epoch_batches(train_set.size(), run.batch_size, run.seed, epoch);
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const double lr = lr_at(sched, global_step, steps_per_epoch);
            std::mt19937_64 rng(mix_seed(run.seed, epoch, static_cast<Index>(bi)));
            data::Batch batch =
                data::make_batch(train_set, batches[bi], run.augment, rng, run.norm);

            double loss_value = 0.0;
            try {
                model.store.zero_grad();
                Var logits = model.forward(ag::constant(batch.images), true, true);
                Var loss = ag::cross_entropy(logits, batch.labels, run.label_smoothing);
                loss_value = loss->value.value();
                if (!std::isfinite(loss_value)) {
                    throw NumericError("loss is not finite");
                }
                ag::backward(loss);
            } catch (const NumericError& e) {
                throw NumericError("training aborted at step " + std::to_string(global_step) +
                                   " (lr=" + std::to_string(lr) + "): " + e.what());
            }
            adamw_step(model.store, state, lr);

            StepRecord rec{global_step, epoch, lr, loss_value};
            result.steps.push_back(rec);
            if (persist) {
                metrics << json{{"type", "step"},
                                {"step", rec.step},
                                {"epoch", rec.epoch},
                                {"lr", rec.lr},
                                {"loss", rec.loss}}
                                .dump()
                        << "\n";
            }
            ++global_step;
            if (run.max_steps > 0 && global_step >= run.max_steps) {
                done = true;
                break;
            }
        }

        const double top1 = evaluate(model, train_set, run.batch_size, run.norm);
        result.epochs.push_back({epoch, top1});
        if (persist) {
            metrics << json{{"type", "epoch"}, {"epoch", epoch}, {"top1", top1}}.dump()
                    << "\n";
        }
        if (persist && run.checkpoint_every_epochs > 0 &&
            (epoch + 1) % run.checkpoint_every_epochs == 0) {
            save_checkpoint(run.out_dir + "/epoch" + std::to_string(epoch) + ".smlp", model,
                            &state);
        }
        if (run.stop_at_train_top1 >= 0.0 && top1 >= run.stop_at_train_top1) {
            result.reached_stop = true;
            done = true;
        }
    }
    result.steps_run = global_step;
    if (persist) {
        save_checkpoint(run.out_dir + "/final.smlp", model, &state);
    }
    return result;
}

void save_checkpoint(const std::string& path, const StripMlpModel& model,
                     const OptimState* optim) {
    NamedTensors entries = model_state(model);
    if (optim != nullptr && optim->initialized()) {
        entries.emplace_back("optim.step",
                             Tensor::scalar(static_cast<double>(optim->step)));
        for (std::size_t i = 0; i < model.store.entries().size(); ++i) {
            const ParamEntry& e = model.store.entries()[i];
            if (!e.trainable) {
                continue;
            }
            entries.emplace_back("optim.m." + e.name, optim->m[i]);
            entries.emplace_back("optim.v." + e.name, optim->v[i]);
        }
    }
    write_tensor_container(path, entries);
}

void load_checkpoint(const std::string& path, StripMlpModel& model, OptimState* optim) {
    NamedTensors entries = read_tensor_container(path);
    load_model_state(model, entries);
    if (optim == nullptr) {
        return;
    }
    optim->initialize(model.store);
    bool have_step = false;
    for (const auto& [name, tensor] : entries) {
        if (name == "optim.step") {
            optim->step = static_cast<Index>(tensor.value());
            have_step = true;
        }
    }
    if (!have_step) {
        return;  // model-only checkpoint: fresh optimizer
    }
    for (const auto& [name, tensor] : entries) {
        const bool is_m = name.rfind("optim.m.", 0) == 0;
        const bool is_v = name.rfind("optim.v.", 0) == 0;
        if (!is_m && !is_v) {
            continue;
        }
        const std::string param = name.substr(8);
        if (!model.store.contains(param)) {
            throw IoError("optimizer state for unknown parameter '" + param + "'");
        }
        const ParamEntry& e = model.store.at(param);
        if (tensor.shape() != e.var->value.shape()) {
            throw ShapeError("optimizer tensor '" + name + "' has shape " +
                             shape_str(tensor.shape()) + ", expected " +
                             shape_str(e.var->value.shape()));
        }
        std::size_t index = 0;
        for (; index < model.store.entries().size(); ++index) {
            if (model.store.entries()[index].name == param) {
                break;
            }
        }
        (is_m ? optim->m : optim->v)[index] = tensor;
    }
}

}  // namespace stripmlp::train
