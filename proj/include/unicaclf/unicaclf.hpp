#pragma once

#include "unicaclf/types.hpp"
#include "unicaclf/tensor.hpp"
#include "unicaclf/rng.hpp"
#include "unicaclf/cap.hpp"
#include "unicaclf/conv.hpp"
#include "unicaclf/heads.hpp"
#include "unicaclf/losses.hpp"
#include "unicaclf/postprocess.hpp"
#include "unicaclf/metrics.hpp"
#include "unicaclf/data_io.hpp"
#include "unicaclf/json_io.hpp"
#include "unicaclf/params.hpp"
#include "unicaclf/model.hpp"
#include "unicaclf/adam.hpp"
#include "unicaclf/gradcheck.hpp"
#include "unicaclf/trainer.hpp"
#include "unicaclf/cli.hpp"
