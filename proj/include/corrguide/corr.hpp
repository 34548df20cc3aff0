// SPDX-License-Identifier: Apache-2.0
//
// Correspondence estimation from the matching map, dominant-token outlier
// filtering, and consensus-weighted displacement smoothing.
#pragma once

#include "corrguide/types.hpp"

namespace corrguide::corr {

// Per-row argmax over the matching map. Ties break toward the smallest flat
// reference index; all-zero rows become Unmatched. Consensus is the matching
// score at the chosen token; displacement is its coordinate offset.
CorrespondenceField estimate(const MatchingMap& matching);

// Reference tokens with strictly more than `threshold` inlier correspondents
// are dominant; every correspondence pointing at one becomes an Outlier with
// consensus zero. Coordinates of demoted entries are preserved.
CorrespondenceField filter_outliers(const CorrespondenceField& field, int threshold);

// Consensus-weighted neighborhood average of the displacement field. Inlier
// and Unmatched tokens whose window carries positive total consensus receive
// the averaged displacement, rounded half-up per axis and clipped to bounds;
// windows with zero total consensus yield Unmatched. Outlier entries pass
// through untouched.
CorrespondenceField smooth(const CorrespondenceField& field, int win_s);

}  // namespace corrguide::corr
