#pragma once

namespace fire2::trainer {

/// Epoch-level schedule: linear warmup from lr_start (epoch 1) to lr_peak
/// (epoch warmup_epochs), then step decay by decay_factor every decay_every
/// epochs. t0 is the warm-stage threshold of the staged objective; t0 ==
/// max_epochs trains the identity-only baseline.
struct TrainSchedule {
    int max_epochs = 40;
    int t0 = 10;
    int warmup_epochs = 5;
    double lr_start = 3.5e-6;
    double lr_peak = 3.5e-4;
    double decay_factor = 10.0;
    int decay_every = 10;
    int ids_per_batch = 8;
    int instances_per_id = 4;
    double weight_decay = 5e-4;
    int checkpoint_every = 0;  // extra numbered checkpoints; last.ckpt is always written

    int batch_size() const { return ids_per_batch * instances_per_id; }
    void validate() const;
};

double lr_at(int epoch, const TrainSchedule& s);

}  // namespace fire2::trainer
