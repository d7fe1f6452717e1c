#include "fire2/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "fire2/errors.hpp"

namespace fire2::trainer {

void TrainSchedule::validate() const {
    if (max_epochs < 1) throw ConfigError("schedule.max_epochs: must be >= 1");
    if (t0 < 1 || t0 > max_epochs)
        throw ConfigError("schedule.t0: must satisfy 1 <= t0 <= max_epochs");
    if (warmup_epochs < 1 || warmup_epochs > max_epochs)
        throw ConfigError("schedule.warmup_epochs: must be in [1, max_epochs]");
    if (lr_start <= 0.0 || lr_peak <= 0.0 || lr_start > lr_peak)
        throw ConfigError("schedule.lr_start/lr_peak: need 0 < lr_start <= lr_peak");
    if (decay_factor <= 1.0) throw ConfigError("schedule.decay_factor: must be > 1");
    if (decay_every < 1) throw ConfigError("schedule.decay_every: must be >= 1");
    if (ids_per_batch < 2) throw ConfigError("schedule.ids_per_batch: must be >= 2");
    if (instances_per_id < 2) throw ConfigError("schedule.instances_per_id: must be >= 2");
    if (weight_decay < 0.0) throw ConfigError("schedule.weight_decay: must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("schedule.checkpoint_every: must be >= 0");
}

double lr_at(int epoch, const TrainSchedule& s) {
    if (epoch < 1 || epoch > s.max_epochs)
        throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [1, " +
                                std::to_string(s.max_epochs) + "]");
    if (epoch <= s.warmup_epochs) {
        if (s.warmup_epochs == 1) return s.lr_peak;
        const double t = static_cast<double>(epoch - 1) / (s.warmup_epochs - 1);
        return s.lr_start + t * (s.lr_peak - s.lr_start);
    }
    const int decays = (epoch - s.warmup_epochs) / s.decay_every;
    return s.lr_peak * std::pow(s.decay_factor, -static_cast<double>(decays));
}

}  // namespace fire2::trainer
