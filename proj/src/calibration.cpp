#include <cmath>

#include <Eigen/Dense>

#include "semprint/error.hpp"
#include "semprint/printsim.hpp"

namespace semprint {

ActuatorModel calibrate_actuator(const std::vector<TestPrintRecord>& records) {
  if (records.size() < 2) {
    throw Error(ErrorCode::insufficient_data,
                "calibration needs at least 2 test print records, got " + std::to_string(records.size()));
  }
  const int n = static_cast<int>(records.size());
  Eigen::VectorXd r(n), k(n);
  bool spread = false;
  for (int i = 0; i < n; ++i) {
    const auto& rec = records[i];
    if (!(rec.commanded > 0.0) || !(rec.measured > 0.0)) {
      throw Error(ErrorCode::invalid_argument, "test print values must be > 0");
    }
    r[i] = std::log(rec.measured / rec.commanded);
    k[i] = rec.layer;
    if (rec.layer != records.front().layer) spread = true;
  }

  ActuatorModel model;
  double a = r.mean();
  double d = 0.0;
  int params = 1;
  if (spread) {
    params = 2;
    // Start from the straight-line fit r = a + d k, then Gauss-Newton on log(1 + d k).
    const double km = k.mean();
    const double skk = (k.array() - km).square().sum();
    d = ((k.array() - km) * (r.array() - r.mean())).sum() / skk;
    a = r.mean() - d * km;
    for (int it = 0; it < 100; ++it) {
      Eigen::MatrixXd J(n, 2);
      Eigen::VectorXd res(n);
      bool ok = true;
      for (int i = 0; i < n; ++i) {
        const double s = 1.0 + d * k[i];
        if (!(s > 0.0)) {
          ok = false;
          break;
        }
        res[i] = r[i] - a - std::log(s);
        J(i, 0) = 1.0;
        J(i, 1) = k[i] / s;
      }
      if (!ok) {
        d *= 0.5;
        continue;
      }
      const Eigen::Vector2d step = J.colPivHouseholderQr().solve(res);
      a += step[0];
      d += step[1];
      if (step.lpNorm<Eigen::Infinity>() <= 1e-15 * (1.0 + std::abs(a) + std::abs(d))) break;
    }
  }
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = r[i] - a - std::log(1.0 + d * k[i]);
    ss += e * e;
  }
  model.gain = std::exp(a);
  model.drift_rate = d;
  model.noise_sd = n > params ? std::sqrt(ss / (n - params)) : 0.0;
  return model;
}

}  // namespace semprint
