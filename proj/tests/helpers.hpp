#pragma once

#include <filesystem>
#include <string>

#include "pmim/autodiff.hpp"
#include "pmim/mat.hpp"
#include "pmim/rng.hpp"

namespace testutil {

// Fresh directory under the system temp root; removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("pmim_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

template <class S>
pmim::Mat<S> random_matrix(int rows, int cols, pmim::Rng& rng, double scale = 1.0) {
  pmim::Mat<S> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      m(i, j) = static_cast<S>(scale * (2.0 * rng.uniform() - 1.0));
  return m;
}

// Central-difference check of d(loss)/d(param) for every entry of every
// param against the tape's gradient. `loss_fn` must rebuild the graph from
// the store's current values on each call. Deviations at or below
// `abs_floor` pass outright (they sit in finite-difference roundoff);
// larger ones are measured relative to the bigger of the two gradients.
template <class LossFn>
double max_gradient_error(pmim::ParamStore<double>& params, LossFn loss_fn,
                          double fd_step = 1e-5, double abs_floor = 1e-8) {
  params.zero_grads();
  {
    pmim::Graph<double> g;
    pmim::Node<double>* loss = loss_fn(g);
    g.backward(loss);
  }
  double worst = 0.0;
  for (auto& p : params) {
    for (int i = 0; i < p.value.rows(); ++i)
      for (int j = 0; j < p.value.cols(); ++j) {
        const double saved = p.value(i, j);
        p.value(i, j) = saved + fd_step;
        double up, down;
        {
          pmim::Graph<double> g;
          up = loss_fn(g)->value()(0, 0);
        }
        p.value(i, j) = saved - fd_step;
        {
          pmim::Graph<double> g;
          down = loss_fn(g)->value()(0, 0);
        }
        p.value(i, j) = saved;
        const double fd = (up - down) / (2.0 * fd_step);
        const double got = p.grad(i, j);
        const double diff = std::abs(got - fd);
        if (diff <= abs_floor) continue;
        worst = std::max(worst, diff / std::max(std::abs(fd), std::abs(got)));
      }
  }
  return worst;
}

}  // namespace testutil
