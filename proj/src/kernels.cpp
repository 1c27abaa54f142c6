#include "nestad/kernels.hpp"

#include <vector>

namespace nestad::kernels {

void matmul_serial(std::span<const double> a, std::span<const double> b,
                   std::span<double> out, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  }
}

void matmul_parallel(std::span<const double> a, std::span<const double> b,
                     std::span<double> out, std::int64_t m, std::int64_t k, std::int64_t n) {
  // Each output element keeps the serial accumulation order, so the result is
  // bit-identical to matmul_serial regardless of thread count.
  const std::int64_t work = m * k * n;
#pragma omp parallel for schedule(static) if (m > 1 && work >= kParallelGrain)
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  }
}

void matmul(Exec exec, std::span<const double> a, std::span<const double> b,
            std::span<double> out, std::int64_t m, std::int64_t k, std::int64_t n) {
  if (exec == Exec::kParallel) {
    matmul_parallel(a, b, out, m, k, n);
  } else {
    matmul_serial(a, b, out, m, k, n);
  }
}

// Both reduce paths sum fixed 4096-element blocks and combine the partials
// in block order: the summation tree depends only on n, so serial and
// parallel agree bitwise and the thread count never shows in the numbers.
namespace {
constexpr std::int64_t kReduceBlock = 4096;
}

double reduce_sum_serial(std::span<const double> in) {
  const std::int64_t n = static_cast<std::int64_t>(in.size());
  double total = 0.0;
  for (std::int64_t lo = 0; lo < n; lo += kReduceBlock) {
    const std::int64_t hi = lo + kReduceBlock < n ? lo + kReduceBlock : n;
    double acc = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) acc += in[i];
    total += acc;
  }
  return total;
}

double reduce_sum_parallel(std::span<const double> in) {
  const std::int64_t n = static_cast<std::int64_t>(in.size());
  if (n < kParallelGrain) return reduce_sum_serial(in);
  const std::int64_t blocks = (n + kReduceBlock - 1) / kReduceBlock;
  std::vector<double> partial(static_cast<std::size_t>(blocks), 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t bi = 0; bi < blocks; ++bi) {
    const std::int64_t lo = bi * kReduceBlock;
    const std::int64_t hi = lo + kReduceBlock < n ? lo + kReduceBlock : n;
    double acc = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) acc += in[i];
    partial[static_cast<std::size_t>(bi)] = acc;
  }
  double acc = 0.0;
  for (double v : partial) acc += v;
  return acc;
}

double reduce_sum(Exec exec, std::span<const double> in) {
  return exec == Exec::kParallel ? reduce_sum_parallel(in) : reduce_sum_serial(in);
}

void bias_add_serial(std::span<const double> x, std::span<const double> bias,
                     std::span<double> out, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + bias[c];
}

void bias_add_parallel(std::span<const double> x, std::span<const double> bias,
                       std::span<double> out, std::int64_t rows, std::int64_t cols) {
  const std::int64_t n = rows * cols;
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + bias[c];
}

void bias_add(Exec exec, std::span<const double> x, std::span<const double> bias,
              std::span<double> out, std::int64_t rows, std::int64_t cols) {
  if (exec == Exec::kParallel) {
    bias_add_parallel(x, bias, out, rows, cols);
  } else {
    bias_add_serial(x, bias, out, rows, cols);
  }
}

void transpose_serial(std::span<const double> x, std::span<double> out,
                      std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out[c * rows + r] = x[r * cols + c];
}

void transpose_parallel(std::span<const double> x, std::span<double> out,
                        std::int64_t rows, std::int64_t cols) {
  const std::int64_t n = rows * cols;
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out[c * rows + r] = x[r * cols + c];
}

void transpose(Exec exec, std::span<const double> x, std::span<double> out,
               std::int64_t rows, std::int64_t cols) {
  if (exec == Exec::kParallel) {
    transpose_parallel(x, out, rows, cols);
  } else {
    transpose_serial(x, out, rows, cols);
  }
}

void col_sum_serial(std::span<const double> x, std::span<double> out,
                    std::int64_t rows, std::int64_t cols) {
  for (std::int64_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) acc += x[r * cols + c];
    out[c] = acc;
  }
}

void col_sum_parallel(std::span<const double> x, std::span<double> out,
                      std::int64_t rows, std::int64_t cols) {
  const std::int64_t n = rows * cols;
#pragma omp parallel for schedule(static) if (n >= kParallelGrain)
  for (std::int64_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) acc += x[r * cols + c];
    out[c] = acc;
  }
}

void col_sum(Exec exec, std::span<const double> x, std::span<double> out,
             std::int64_t rows, std::int64_t cols) {
  if (exec == Exec::kParallel) {
    col_sum_parallel(x, out, rows, cols);
  } else {
    col_sum_serial(x, out, rows, cols);
  }
}

}  // namespace nestad::kernels
