// Times the OpenMP kernels against the serial reference paths on a synthetic
// dataset and verifies that both produce identical bits.

#include <chrono>
#include <cstring>
#include <iomanip>
#include <iostream>

#include "recpriv/experiment.hpp"
#include "recpriv/fixtures.hpp"
#include "recpriv/ldp.hpp"
#include "recpriv/metrics.hpp"
#include "recpriv/parallel.hpp"
#include "recpriv/train.hpp"

using namespace recpriv;

namespace {

double seconds(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename F>
double timed(F&& f, int repeats = 3) {
  double best = 1e99;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, seconds(t0));
  }
  return best;
}

void row(const std::string& name, double serial_s, double parallel_s, bool identical) {
  std::cout << std::left << std::setw(28) << name << std::right << std::fixed
            << std::setprecision(4) << std::setw(10) << serial_s << " s" << std::setw(10)
            << parallel_s << " s" << std::setw(8) << std::setprecision(2)
            << (parallel_s > 0 ? serial_s / parallel_s : 0.0) << "x   "
            << (identical ? "bitwise-equal" : "MISMATCH") << "\n";
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

int main(int argc, char** argv) {
  int users = 1500, items = 600;
  if (argc > 1) users = std::atoi(argv[1]);
  if (argc > 2) items = std::atoi(argv[2]);
  std::cout << "synthetic dataset: " << users << " users x " << items << " items\n";
  const InteractionStore store = fixtures::synthetic_store(users, items, 11);
  const SplitDataset split = split_per_user(store, 11);
  const SegmentMap segments = segment(store, split);
  std::cout << "post-preprocess: " << store.num_users << " users, " << store.num_items
            << " items, " << store.num_interactions() << " interactions\n\n";
  std::cout << std::left << std::setw(28) << "kernel" << std::right << std::setw(12) << "serial"
            << std::setw(12) << "openmp" << std::setw(9) << "speedup" << "\n";

  // full-catalog evaluation, svd and ncf
  for (ModelKind kind : {ModelKind::svd, ModelKind::ncf}) {
    ModelDims dims;
    const ModelState state = init_model(kind, dims, store.num_users, store.num_items, 5);
    MetricsReport serial_r, parallel_r;
    const double ts = timed([&] {
      serial_r = evaluate(state, store, split, segments, 10, split.train, /*serial=*/true);
    });
    const double tp = timed([&] {
      parallel_r = evaluate(state, store, split, segments, 10, split.train, /*serial=*/false);
    });
    row(std::string("evaluate/") + model_kind_name(kind), ts, tp,
        serial_r.to_json() == parallel_r.to_json());
  }

  // per-example gradient + clip batch, ncf
  {
    ModelDims dims;
    const ModelState state = init_model(ModelKind::ncf, dims, store.num_users, store.num_items, 5);
    std::vector<TrainExample> batch;
    SplitMix64 rng(99);
    std::uniform_int_distribution<UserIndex> pick_u(0, store.num_users - 1);
    std::uniform_int_distribution<ItemIndex> pick_i(0, store.num_items - 1);
    for (int n = 0; n < 4096; ++n)
      batch.push_back({pick_u(rng), pick_i(rng), -1, n % 2 ? 1.0 : 0.0});
    std::vector<SparseGrad> grads(batch.size());
    auto run_pass = [&](bool serial, std::vector<double>& sum) {
      par::for_each_index(
          batch.size(),
          [&](std::size_t b) {
            loss_and_grad_sparse(state, batch[b], {}, mix_seed(7, b), grads[b]);
            grads[b].clip_to(1.0);
          },
          serial);
      std::fill(sum.begin(), sum.end(), 0.0);
      for (const SparseGrad& g : grads) g.add_to(sum);
    };
    std::vector<double> sum_s(state.param_count()), sum_p(state.param_count());
    const double ts = timed([&] { run_pass(true, sum_s); });
    const double tp = timed([&] { run_pass(false, sum_p); });
    row("grad+clip batch/NCF", ts, tp, same_bits(sum_s, sum_p));
  }

  // ldp perturbation across users
  {
    LdpSpec spec{0.5, 21};
    std::vector<std::vector<ItemIndex>> out_s, out_p;
    const double ts = timed([&] { out_s = perturb_training_set(split, store, spec, true); });
    const double tp = timed([&] { out_p = perturb_training_set(split, store, spec, false); });
    row("ldp perturb", ts, tp, out_s == out_p);
  }

  // two training epochs end to end, bpr
  {
    ExperimentConfig cfg;
    cfg.dataset.name = "synthetic";
    cfg.model_kind = "BPR";
    cfg.train.max_epochs = 2;
    cfg.train.patience = 6;
    cfg.train.batch_size = 256;
    cfg.train.lr = 0.05;
    PrivacySetup privacy;
    TrainResult r_serial, r_parallel;
    const double ts = timed(
        [&] {
          TrainConfig tc = cfg.train;
          tc.serial = true;
          r_serial = train(init_model(ModelKind::bpr, cfg.dims, store.num_users, store.num_items, 3),
                           store, split, split.train, tc, privacy, 17);
        },
        1);
    const double tp = timed(
        [&] {
          TrainConfig tc = cfg.train;
          tc.serial = false;
          r_parallel = train(init_model(ModelKind::bpr, cfg.dims, store.num_users, store.num_items, 3),
                             store, split, split.train, tc, privacy, 17);
        },
        1);
    row("train 2 epochs/BPR", ts, tp, same_bits(r_serial.state.params, r_parallel.state.params));
  }
  return 0;
}
