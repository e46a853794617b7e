// Serial reference versus the OpenMP chunked tracer, forward plus backward.
#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

#include "irb/kernels.hpp"

using namespace irb;

namespace {

struct Setup {
  RadianceField field;
  TraceConfig cfg;
  std::vector<RayTask> tasks;
  std::vector<FramePoseJacobian> frames;
  std::vector<double> grad;

  explicit Setup(int rays) : field(FieldSpec{}) {
    field.initialize(1);
    cfg.samp.n_samples = 48;
    cfg.enc.alpha_pe = 6.0;
    const Pose pose = Pose::identity();
    frames.push_back(FramePoseJacobian::from_pose(pose, std::ptrdiff_t(field.param_count()),
                                                  std::ptrdiff_t(field.param_count() + 3)));
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-0.4, 0.4);
    for (int i = 0; i < rays; ++i) {
      RayTask t;
      t.dir_camera = Vec3(u(rng), u(rng), 1.0).normalized();
      t.direction = t.dir_camera;
      t.frame = 0;
      tasks.push_back(t);
    }
    grad.assign(field.param_count() + 6, 0.0);
  }

  RayTermFn term() const {
    return [](std::size_t, const RenderResult& r, GradientSink&) {
      RayLoss l;
      const Vec3 d = r.color - Vec3::Constant(0.5);
      l.value = d.squaredNorm();
      l.d_color = 2.0 * d;
      return l;
    };
  }
};

void BM_trace_serial(benchmark::State& state) {
  Setup s(int(state.range(0)));
  RayTracer tracer;
  for (auto _ : state) {
    std::fill(s.grad.begin(), s.grad.end(), 0.0);
    auto r = tracer.trace_serial(s.field, s.cfg, s.tasks, {}, s.frames, s.term(), s.grad);
    benchmark::DoNotOptimize(r.loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_trace_parallel(benchmark::State& state) {
  Setup s(int(state.range(0)));
  RayTracer tracer;
  for (auto _ : state) {
    std::fill(s.grad.begin(), s.grad.end(), 0.0);
    auto r = tracer.trace(s.field, s.cfg, s.tasks, {}, s.frames, s.term(), s.grad);
    benchmark::DoNotOptimize(r.loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.counters["threads"] = omp_get_max_threads();
}

}  // namespace

BENCHMARK(BM_trace_serial)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_trace_parallel)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
