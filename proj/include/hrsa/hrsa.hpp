#pragma once

#include <hrsa/activation_store.hpp>
#include <hrsa/error.hpp>
#include <hrsa/geometry.hpp>
#include <hrsa/npy.hpp>
#include <hrsa/numerics.hpp>
#include <hrsa/probe.hpp>
#include <hrsa/report.hpp>
#include <hrsa/representation.hpp>
#include <hrsa/sweep.hpp>
