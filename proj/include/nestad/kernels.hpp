#pragma once

#include <cstdint>
#include <span>

// Numeric kernels backing the op registry. Every kernel exists twice: a plain
// serial loop (the reference used by tests) and an OpenMP variant. Both are
// bit-deterministic for a fixed input: element-wise and matmul kernels
// parallelize over independent output elements, and the parallel reduction
// uses a fixed block decomposition so the summation order does not depend on
// the thread count.
namespace nestad::kernels {

enum class Exec { kSerial, kParallel };

// Below this many elements the parallel variants fall back to the serial
// loop; spawning a team for tiny tensors costs more than it saves.
inline constexpr std::int64_t kParallelGrain = 2048;

template <class F>
void map_serial(std::span<const double> in, std::span<double> out, F f) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
}

template <class F>
void map_parallel(std::span<const double> in, std::span<double> out, F f) {
  const std::int64_t n = static_cast<std::int64_t>(in.size());
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
  for (std::int64_t i = 0; i < n; ++i) out[i] = f(in[i]);
}

template <class F>
void map(Exec exec, std::span<const double> in, std::span<double> out, F f) {
  if (exec == Exec::kParallel) {
    map_parallel(in, out, f);
  } else {
    map_serial(in, out, f);
  }
}

template <class F>
void zip_serial(std::span<const double> a, std::span<const double> b,
                std::span<double> out, F f) {
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
}

template <class F>
void zip_parallel(std::span<const double> a, std::span<const double> b,
                  std::span<double> out, F f) {
  const std::int64_t n = static_cast<std::int64_t>(a.size());
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
  for (std::int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
}

template <class F>
void zip(Exec exec, std::span<const double> a, std::span<const double> b,
         std::span<double> out, F f) {
  if (exec == Exec::kParallel) {
    zip_parallel(a, b, out, f);
  } else {
    zip_serial(a, b, out, f);
  }
}

// out[m,n] = a[m,k] * b[k,n], row-major.
void matmul_serial(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_parallel(std::span<const double> a, std::span<const double> b,
                     std::span<double> out, std::int64_t m, std::int64_t k, std::int64_t n);
void matmul(Exec exec, std::span<const double> a, std::span<const double> b,
            std::span<double> out, std::int64_t m, std::int64_t k, std::int64_t n);

double reduce_sum_serial(std::span<const double> in);
double reduce_sum_parallel(std::span<const double> in);
double reduce_sum(Exec exec, std::span<const double> in);

// out[r,c] = x[r,c] + bias[c]
void bias_add_serial(std::span<const double> x, std::span<const double> bias,
                     std::span<double> out, std::int64_t rows, std::int64_t cols);
void bias_add_parallel(std::span<const double> x, std::span<const double> bias,
                       std::span<double> out, std::int64_t rows, std::int64_t cols);
void bias_add(Exec exec, std::span<const double> x, std::span<const double> bias,
              std::span<double> out, std::int64_t rows, std::int64_t cols);

// out[c,r] = x[r,c]
void transpose_serial(std::span<const double> x, std::span<double> out,
                      std::int64_t rows, std::int64_t cols);
void transpose_parallel(std::span<const double> x, std::span<double> out,
                        std::int64_t rows, std::int64_t cols);
void transpose(Exec exec, std::span<const double> x, std::span<double> out,
               std::int64_t rows, std::int64_t cols);

// out[c] = sum_r x[r,c]
void col_sum_serial(std::span<const double> x, std::span<double> out,
                    std::int64_t rows, std::int64_t cols);
void col_sum_parallel(std::span<const double> x, std::span<double> out,
                      std::int64_t rows, std::int64_t cols);
void col_sum(Exec exec, std::span<const double> x, std::span<double> out,
             std::int64_t rows, std::int64_t cols);

}  // namespace nestad::kernels
