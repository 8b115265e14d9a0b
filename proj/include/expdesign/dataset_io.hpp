#pragma once

#include <iosfwd>
#include <string>
#include <string_view>

#include "expdesign/gp_regression.hpp"

namespace expdesign {

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

/// Header `x_0,..,x_{nx-1},u_0,..,u_{nu-1},y_0,..,y_{nx-1}`, one triple per row.
void write_dataset_csv(std::ostream& out, const Datasetd& data);
void write_dataset_csv(const std::string& path, const Datasetd& data);

/// Dimensions are taken from the header.
Datasetd read_dataset_csv(std::istream& in);
Datasetd read_dataset_csv(const std::string& path);

}  // namespace expdesign
