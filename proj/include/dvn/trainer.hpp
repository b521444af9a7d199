#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <vector>

#include "dvn/dataset.hpp"
#include "dvn/errors.hpp"
#include "dvn/model.hpp"

namespace dvn {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 64;
    double model_step = 1e-3;   // encoder + decoder
    double critic_step = 1e-3;
    double prior_step = 1e-3;   // prior discriminator
    double lambda = 1.0;
    int k_critic_steps = 1;
    int dz_finetune_epochs = 5;
    std::uint64_t seed = 0;
};

struct EpochLog {
    int epoch = 0;
    LossBreakdown loss;
    double dz_accuracy = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
};

/// Header `epoch,recon,kl,mi,total,dz_acc,seconds`.
void write_train_log(std::ostream& out, const TrainLog& log);

/// Thrown when a loss turns non-finite; carries the model as it was before
/// the failing update.
class DivergenceError : public TrainingError {
public:
    DivergenceError(const std::string& what, int epoch, VerifierModel last_good)
        : TrainingError(what, epoch), last_good_(std::make_shared<VerifierModel>(std::move(last_good))) {}
    const VerifierModel& last_good() const { return *last_good_; }

private:
    std::shared_ptr<const VerifierModel> last_good_;
};

struct TrainResult {
    VerifierModel model;
    TrainLog log;
};

/// Three-player training on ground-truth labels. Per mini-batch:
/// k_critic_steps ascent steps on the critic, one descent step on
/// encoder + decoder with the critic fixed, one prior-discriminator step.
/// Afterwards the prior discriminator is fine-tuned against the final encoder.
TrainResult train_dvn(const Dataset& train, const VerifierArch& arch, const TrainConfig& config);

struct PriorFitConfig {
    int epochs = 5;
    int batch_size = 64;
    double step_size = 1e-3;
    std::uint64_t seed = 0;
    bool prior_is_positive = true;  // label of p(z) draws; pushforward draws get the other label
};

/// Mean binary cross-entropy of the D_z network `net` on prior draws and
/// pushforward draws (rows are latent codes). Optionally returns the gradient
/// with respect to the network parameters and the count of correct calls.
double prior_discriminator_loss(const Mlp& net, const Eigen::MatrixXd& prior_z, const Eigen::MatrixXd& pushforward_z,
                                bool prior_is_positive, Eigen::VectorXd* grad = nullptr,
                                std::size_t* correct = nullptr);

/// Binary cross-entropy fit of D_z: draws from N(0, I) against the encoder's
/// pushforward of `train` (reparameterization noise included). The encoder
/// is frozen; training starts from the model's current D_z parameters.
/// Returns the new D_z parameters.
Eigen::VectorXd fit_prior_discriminator(const VerifierModel& model, const Dataset& train,
                                        const PriorFitConfig& config,
                                        double* final_accuracy = nullptr);

void save_checkpoint(const VerifierModel& model, const std::filesystem::path& path);
VerifierModel load_checkpoint(const std::filesystem::path& path);

}  // namespace dvn
