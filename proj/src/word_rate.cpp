#include "mapguide/word_rate.hpp"

#include "mapguide/stimulus_features.hpp"

#include <cmath>

namespace mapguide {

Vector words_per_tr(const WordTimeline& timeline, Index n_trs, double t0, double tr) {
  Vector counts = Vector::Zero(n_trs);
  for (const auto& e : timeline.entries) {
    const auto i = static_cast<Index>(std::floor((e.time - t0) / tr));
    if (i >= 0 && i < n_trs) counts(i) += 1.0;
  }
  return counts;
}

namespace {

Matrix design(const FmriSeries& aud, const std::vector<int>& delays) {
  return delay_matrix(aud.data, delays);
}

}  // namespace

WordRateModel fit_word_rate(const FmriSeries& auditory, const WordTimeline& timeline, double ridge_lambda,
                            const std::vector<int>& delays) {
  auditory.validate();
  if (auditory.n_trs() < 2) throw FitError("word rate fit needs at least 2 TRs");
  if (!(ridge_lambda >= 0.0)) throw ArgumentError("ridge_lambda must be >= 0");
  if (delays.empty()) throw ArgumentError("word rate model needs at least one delay");
  const double end = auditory.time_at(auditory.n_trs());
  if (timeline.empty() || timeline.entries.back().time < auditory.t0 || timeline.entries.front().time >= end)
    throw FitError("timeline does not overlap the scan interval");

  const Matrix x = design(auditory, delays);
  if (x.cwiseAbs().maxCoeff() == 0.0) throw FitError("degenerate word rate design: all delayed voxels are zero");
  const Vector y = words_per_tr(timeline, auditory.n_trs(), auditory.t0, auditory.tr_seconds);

  WordRateModel model;
  model.auditory_voxel_ids = auditory.voxel_ids;
  model.delays = delays;
  model.ridge_lambda = ridge_lambda;
  model.column_means = x.colwise().mean();
  const Matrix xc = x.rowwise() - model.column_means;
  const double y_mean = y.mean();

  // Centered columns with an unpenalized intercept: lambda -> inf gives the mean rate.
  Matrix gram = xc.transpose() * xc;
  gram.diagonal().array() += ridge_lambda;
  const Vector rhs = xc.transpose() * (y.array() - y_mean).matrix();
  const Vector w = gram.ldlt().solve(rhs);
  if (!w.allFinite()) throw FitError("word rate ridge solve failed");
  model.weights.resize(w.size() + 1);
  model.weights.head(w.size()) = w;
  model.weights(w.size()) = y_mean;
  return model;
}

Vector predict_word_rate(const WordRateModel& model, const FmriSeries& fmri) {
  const auto aud = fmri.select_voxels(model.auditory_voxel_ids);
  const Matrix x = design(aud, model.delays);
  if (x.cols() + 1 != model.weights.size()) throw ShapeError("word rate model does not match the voxel design");
  const Index n = x.cols();
  return (x.rowwise() - model.column_means) * model.weights.head(n) +
         Vector::Constant(x.rows(), model.weights(n));
}

std::vector<double> place_word_times(const Vector& rate, double t0, double tr) {
  std::vector<double> times;
  for (Index t = 0; t < rate.size(); ++t) {
    const double r = std::max(0.0, rate(t));
    const auto c = static_cast<long>(std::llround(r));
    const double start = t0 + static_cast<double>(t) * tr;
    for (long j = 0; j < c; ++j)
      times.push_back(start + (static_cast<double>(j) + 0.5) / static_cast<double>(c) * tr);
  }
  return times;
}

std::vector<double> predict_word_times(const WordRateModel& model, const FmriSeries& fmri) {
  return place_word_times(predict_word_rate(model, fmri), fmri.t0, fmri.tr_seconds);
}

json to_json(const WordRateModel& m) {
  return {{"auditory_voxel_ids", m.auditory_voxel_ids},
          {"delays", m.delays},
          {"column_means", std::vector<double>(m.column_means.data(), m.column_means.data() + m.column_means.size())},
          {"weights", std::vector<double>(m.weights.data(), m.weights.data() + m.weights.size())},
          {"ridge_lambda", m.ridge_lambda}};
}

WordRateModel word_rate_from_json(const json& j) {
  reject_unknown_keys(j, {"auditory_voxel_ids", "delays", "column_means", "weights", "ridge_lambda"},
                      "word rate model");
  WordRateModel m;
  try {
    m.auditory_voxel_ids = j.at("auditory_voxel_ids").get<std::vector<std::int64_t>>();
    m.delays = j.at("delays").get<std::vector<int>>();
    const auto means = j.at("column_means").get<std::vector<double>>();
    const auto weights = j.at("weights").get<std::vector<double>>();
    m.column_means = Eigen::Map<const RowVector>(means.data(), static_cast<Index>(means.size()));
    m.weights = Eigen::Map<const Vector>(weights.data(), static_cast<Index>(weights.size()));
    m.ridge_lambda = j.at("ridge_lambda").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("word rate model: ") + e.what());
  }
  const auto expected = m.delays.size() * m.auditory_voxel_ids.size();
  if (static_cast<std::size_t>(m.column_means.size()) != expected ||
      static_cast<std::size_t>(m.weights.size()) != expected + 1)
    throw FormatError("word rate model: weight length must be |delays| * |voxels| + 1");
  return m;
}

}  // namespace mapguide
