#pragma once

#include "selforder/errors.hpp"
#include "selforder/hilbert.hpp"
#include "selforder/quadrature.hpp"
#include "selforder/geometry.hpp"
#include "selforder/model.hpp"
#include "selforder/ode.hpp"
#include "selforder/rng.hpp"
#include "selforder/dynamics.hpp"
#include "selforder/observables.hpp"
