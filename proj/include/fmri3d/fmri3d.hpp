#pragma once

// Umbrella header.

#include "fmri3d/errors.hpp"
#include "fmri3d/tensor.hpp"
#include "fmri3d/autodiff.hpp"
#include "fmri3d/layers.hpp"
#include "fmri3d/recurrent.hpp"
#include "fmri3d/models.hpp"
#include "fmri3d/nifti.hpp"
#include "fmri3d/preprocess.hpp"
#include "fmri3d/phantom.hpp"
#include "fmri3d/dataset.hpp"
#include "fmri3d/training.hpp"
#include "fmri3d/io.hpp"
#include "fmri3d/gradcheck.hpp"
