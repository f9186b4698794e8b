// conditioning.hpp - the condition bundle passed to the velocity network
#pragma once

#include "lyricalign.hpp"
#include "mat.hpp"
#include "types.hpp"

namespace jamflow {

// encoded conditions, latent-aligned; absent conditions keep their null
// content and are flagged, never left as garbage
template <typename T>
struct CondSet {
    Mat<T> lyric;   // l x c_l
    Mat<T> style;   // 1 x c_s
    Mat<T> dur;     // 1 x c_d
    PadMask pad_mask;
    bool lyric_present = true;
    bool style_present = true;
};

// raw conditions, as they come out of the data pipeline; the network encodes
// these in-graph during training so encoder parameters receive gradients
template <typename T>
struct CondInputs {
    PhonemeGrid grid;
    Mat<T> style;  // 1 x c_s
    DurationSpec duration;
    PadMask pad_mask;
    bool lyric_present = true;
    bool style_present = true;
};

}  // namespace jamflow
