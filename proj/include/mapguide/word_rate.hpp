#pragma once

#include "mapguide/core_data.hpp"
#include "mapguide/io.hpp"

#include <vector>

namespace mapguide {

// Ridge regression from delayed auditory voxels to words per TR.
// `weights` holds one entry per (delay, voxel) followed by the bias.
struct WordRateModel {
  std::vector<std::int64_t> auditory_voxel_ids;
  std::vector<int> delays;
  RowVector column_means;
  Vector weights;
  double ridge_lambda = 1.0;
};

// Negative delays read future frames: the response to words in TR t peaks
// a few TRs later.
inline const std::vector<int> kWordRateDelays = {-1, -2, -3, -4};

// Words whose time falls in [t0 + i*TR, t0 + (i+1)*TR), per TR.
Vector words_per_tr(const WordTimeline& timeline, Index n_trs, double t0, double tr);

WordRateModel fit_word_rate(const FmriSeries& auditory, const WordTimeline& timeline, double ridge_lambda,
                            const std::vector<int>& delays = kWordRateDelays);

// Raw (unclipped) rate per TR. Columns are matched to the model by voxel id.
Vector predict_word_rate(const WordRateModel& model, const FmriSeries& fmri);

// Round(clip(rate)) words per TR, placed at (j + 0.5) / c of each TR.
std::vector<double> predict_word_times(const WordRateModel& model, const FmriSeries& fmri);
std::vector<double> place_word_times(const Vector& rate, double t0, double tr);

json to_json(const WordRateModel& m);
WordRateModel word_rate_from_json(const json& j);

}  // namespace mapguide
