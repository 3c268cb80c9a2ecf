// Benchmark comparing the serial reference kernels against the OpenMP
// variants, plus end-to-end gradient throughput with 1..k batch workers.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "canonae/data.hpp"
#include "canonae/kernels.hpp"
#include "canonae/model.hpp"
#include "canonae/rng.hpp"

using namespace canonae;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void bench_matmul(int m, int k, int n, int reps) {
  Rng rng(1);
  std::vector<double> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n),
      c(static_cast<std::size_t>(m) * n);
  for (double& v : a) v = rng.uniform(-1, 1);
  for (double& v : b) v = rng.uniform(-1, 1);

  auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) kernels::matmul_serial(a.data(), b.data(), c.data(), m, k, n);
  const double ts = seconds_since(t0);

  t0 = Clock::now();
  for (int r = 0; r < reps; ++r) kernels::matmul_parallel(a.data(), b.data(), c.data(), m, k, n);
  const double tp = seconds_since(t0);

  const double flops = 2.0 * m * k * n * reps;
  std::printf("matmul %4dx%4dx%4d  serial %8.3f ms (%6.2f GFLOP/s)  parallel %8.3f ms (%6.2f GFLOP/s)  speedup %.2fx\n",
              m, k, n, ts * 1e3, flops / ts * 1e-9, tp * 1e3, flops / tp * 1e-9, ts / tp);
}

void bench_training(Task task, int workers, int samples) {
  ModelSpec spec;
  spec.task = task;
  spec.epochs = 1;
  spec.batch = 32;
  spec.seed = 1;
  if (task == Task::Se3PointCloud) {
    spec.cloud_n = 4;
    spec.zdim = 2;
  } else {
    spec.set_n = 20;
    spec.set_d = 10;
    spec.zdim = 16;
  }
  Dataset ds;
  if (task == Task::Se3PointCloud)
    ds = gen_tetris(samples, 0.01, 3, true);
  else
    ds = gen_digit_sets(spec.set_n, spec.set_d, samples, 3);

  const auto t0 = Clock::now();
  const TrainResult r = train(spec, ds, workers);
  const double t = seconds_since(t0);
  std::printf("train %-18s workers %d: %6.2f s for %4d samples (%6.1f samples/s), loss %.4f\n",
              task_name(task).c_str(), workers, t, samples, samples / t, r.log.back().loss);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP: %d max threads\n", omp_get_max_threads());
#else
  std::printf("OpenMP: disabled\n");
#endif

  bench_matmul(64, 64, 64, 200);
  bench_matmul(128, 128, 128, 50);
  bench_matmul(256, 256, 256, 10);
  bench_matmul(512, 512, 512, 3);

  bench_training(Task::Se3PointCloud, 1, 128);
#ifdef _OPENMP
  bench_training(Task::Se3PointCloud, omp_get_max_threads(), 128);
#endif
  bench_training(Task::DigitSets, 1, 256);
#ifdef _OPENMP
  bench_training(Task::DigitSets, omp_get_max_threads(), 256);
#endif
  return 0;
}
