#ifndef SBDOT_SBDOT_HPP
#define SBDOT_SBDOT_HPP

#include "sbdot/config.hpp"
#include "sbdot/core.hpp"
#include "sbdot/covariance.hpp"
#include "sbdot/dot/forward.hpp"
#include "sbdot/dot/jacobian.hpp"
#include "sbdot/dps.hpp"
#include "sbdot/ensemble.hpp"
#include "sbdot/gaussian.hpp"
#include "sbdot/linear_operator.hpp"
#include "sbdot/matrix_io.hpp"
#include "sbdot/mixture.hpp"
#include "sbdot/nn/optimizer.hpp"
#include "sbdot/nn/score_network.hpp"
#include "sbdot/phantom.hpp"
#include "sbdot/rng.hpp"
#include "sbdot/schedule.hpp"
#include "sbdot/sde.hpp"
#include "sbdot/stats.hpp"
#include "sbdot/ucos.hpp"

#endif
