#include "expdesign/dataset_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace expdesign {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  double v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw std::invalid_argument("parse_double: not a number: '" + std::string(text) + "'");
  }
  return v;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  return out;
}

}  // namespace

void write_dataset_csv(std::ostream& out, const Datasetd& data) {
  const int nx = data.state_dim();
  const int nu = data.input_dim();
  std::string header;
  for (int i = 0; i < nx; ++i) header += "x_" + std::to_string(i) + ",";
  for (int i = 0; i < nu; ++i) header += "u_" + std::to_string(i) + ",";
  for (int i = 0; i < nx; ++i) header += "y_" + std::to_string(i) + (i + 1 < nx ? "," : "");
  out << header << '\n';
  for (int r = 0; r < data.size(); ++r) {
    std::string row;
    for (int i = 0; i < nx; ++i) row += format_double(data.states()(r, i)) + ",";
    for (int i = 0; i < nu; ++i) row += format_double(data.inputs()(r, i)) + ",";
    for (int i = 0; i < nx; ++i) row += format_double(data.measurements()(r, i)) + (i + 1 < nx ? "," : "");
    out << row << '\n';
  }
}

void write_dataset_csv(const std::string& path, const Datasetd& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_dataset_csv(out, data);
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

Datasetd read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("dataset CSV: missing header");
  const auto header = split(line);
  int nx = 0;
  int nu = 0;
  int ny = 0;
  for (const auto& h : header) {
    const auto expect = [&](char prefix, int idx) {
      if (h != std::string(1, prefix) + "_" + std::to_string(idx)) {
        throw std::invalid_argument("dataset CSV: unexpected header column '" + h + "'");
      }
    };
    if (!h.empty() && h[0] == 'x' && nu == 0 && ny == 0) {
      expect('x', nx++);
    } else if (!h.empty() && h[0] == 'u' && ny == 0) {
      expect('u', nu++);
    } else {
      expect('y', ny++);
    }
  }
  if (nx == 0 || nx != ny) throw std::invalid_argument("dataset CSV: header must have matching x_ and y_ columns");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split(line);
    if (static_cast<int>(fields.size()) != nx + nu + ny) {
      throw std::invalid_argument("dataset CSV: row has " + std::to_string(fields.size()) + " fields");
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_double(f));
    rows.push_back(std::move(row));
  }
  const auto m = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(m, nx), u(m, nu), y(m, nx);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    for (int i = 0; i < nx; ++i) x(r, i) = row[static_cast<std::size_t>(i)];
    for (int i = 0; i < nu; ++i) u(r, i) = row[static_cast<std::size_t>(nx + i)];
    for (int i = 0; i < nx; ++i) y(r, i) = row[static_cast<std::size_t>(nx + nu + i)];
  }
  return Datasetd(std::move(x), std::move(u), std::move(y));
}

Datasetd read_dataset_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_dataset_csv(in);
}

}  // namespace expdesign
