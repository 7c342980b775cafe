#include "firn/io.hpp"

#include <fstream>
#include <sstream>

#include "firn/version.hpp"

namespace firn {

namespace {

std::vector<std::string_view> split_lines(const std::string& text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) {
      if (start < text.size()) lines.push_back(std::string_view(text).substr(start));
      break;
    }
    lines.push_back(std::string_view(text).substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

[[noreturn]] void fail(const char* what, std::size_t line_no,
                       const std::string& detail) {
  throw parse_error(std::string(what) + " line " + std::to_string(line_no) +
                    ": " + detail);
}

double need_double(std::string_view tok, const char* what, std::size_t line_no,
                   const char* field) {
  double v;
  if (!parse_double(tok, v))
    fail(what, line_no, std::string("bad number in column '") + field + "'");
  return v;
}

// Shared shape of both TSV readers: a "# <magic>" first line, provenance
// comments, one column-name line, then data rows handed to `row`.
template <typename RowFn>
void parse_tsv(const std::string& text, const char* magic,
               const std::string& columns, ProvenanceList* provenance,
               const char* what, RowFn row) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != std::string("# ") + magic)
    throw parse_error(std::string(what) +
                      ": missing or unsupported header, expected '# " + magic +
                      "'");
  std::size_t i = 1;
  for (; i < lines.size() && !lines[i].empty() && lines[i][0] == '#'; ++i) {
    std::string_view body = lines[i].substr(1);
    if (!body.empty() && body[0] == ' ') body.remove_prefix(1);
    const std::size_t sp = body.find(' ');
    if (provenance != nullptr && sp != std::string_view::npos)
      provenance->emplace_back(std::string(body.substr(0, sp)),
                               std::string(body.substr(sp + 1)));
  }
  if (i >= lines.size() || std::string(lines[i]) != columns)
    fail(what, i + 1, "expected column header '" + columns + "'");
  for (++i; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    row(lines[i], i + 1);
  }
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw parse_error("cannot write " + path);
  out << content;
  if (!out) throw parse_error("short write to " + path);
}

static const char* kCoresColumns =
    "core_id\texpedition\tlat\tlon\tdx\tdepth\tdensity";
static const char* kCovariatesColumns = "lat\tlon\ttemperature\tsmb";

std::string cores_to_tsv(const std::vector<CoreRecord>& cores,
                         const ProvenanceList& provenance) {
  std::string out = "# firn-cores v1\n";
  for (const auto& [k, v] : provenance) out += "# " + k + " " + v + "\n";
  out += kCoresColumns;
  out += '\n';
  for (const auto& c : cores) {
    const std::string prefix = c.core_id + "\t" + c.expedition + "\t" +
                               format_double(c.lat) + "\t" +
                               format_double(c.lon) + "\t" +
                               format_double(c.dx) + "\t";
    for (Eigen::Index i = 0; i < c.n_obs(); ++i) {
      out += prefix;
      out += format_double(c.depths[i]);
      out += '\t';
      out += format_double(c.densities[i]);
      out += '\n';
    }
  }
  return out;
}

std::vector<CoreRecord> parse_cores_tsv(const std::string& text,
                                        ProvenanceList* provenance) {
  struct Partial {
    CoreRecord rec;
    std::vector<double> depths, densities;
  };
  std::vector<Partial> partials;

  parse_tsv(text, "firn-cores v1", kCoresColumns, provenance, "cores file",
            [&](std::string_view line, std::size_t no) {
              const auto f = split_tabs(line);
              if (f.size() != 7)
                fail("cores file", no,
                     "expected 7 tab-separated fields, got " +
                         std::to_string(f.size()));
              const std::string id(f[0]);
              const std::string exped(f[1]);
              const double lat = need_double(f[2], "cores file", no, "lat");
              const double lon = need_double(f[3], "cores file", no, "lon");
              // "na" leaves dx to be derived from the depth span
              const double dx =
                  f[4] == "na" ? 0.0 : need_double(f[4], "cores file", no, "dx");
              const double depth = need_double(f[5], "cores file", no, "depth");
              const double dens = need_double(f[6], "cores file", no, "density");
              Partial* p = nullptr;
              for (auto& q : partials)
                if (q.rec.core_id == id) {
                  p = &q;
                  break;
                }
              if (p == nullptr) {
                partials.emplace_back();
                p = &partials.back();
                p->rec.core_id = id;
                p->rec.expedition = exped;
                p->rec.lat = lat;
                p->rec.lon = lon;
                p->rec.dx = dx;
              } else if (p->rec.expedition != exped || p->rec.lat != lat ||
                         p->rec.lon != lon || p->rec.dx != dx) {
                fail("cores file", no,
                     "core " + id + " repeats with different metadata");
              }
              p->depths.push_back(depth);
              p->densities.push_back(dens);
            });

  std::vector<CoreRecord> cores;
  cores.reserve(partials.size());
  for (auto& p : partials) {
    p.rec.depths = Eigen::Map<Eigen::VectorXd>(
        p.depths.data(), static_cast<Eigen::Index>(p.depths.size()));
    p.rec.densities = Eigen::Map<Eigen::VectorXd>(
        p.densities.data(), static_cast<Eigen::Index>(p.densities.size()));
    cores.push_back(std::move(p.rec));
  }
  return cores;
}

std::string covariates_to_tsv(const std::vector<CovariateRow>& rows,
                              const ProvenanceList& provenance) {
  std::string out = "# firn-covariates v1\n";
  for (const auto& [k, v] : provenance) out += "# " + k + " " + v + "\n";
  out += kCovariatesColumns;
  out += '\n';
  for (const auto& r : rows) {
    out += format_double(r.lat);
    out += '\t';
    out += format_double(r.lon);
    out += '\t';
    out += format_double(r.temperature);
    out += '\t';
    out += format_double(r.smb);
    out += '\n';
  }
  return out;
}

std::vector<CovariateRow> parse_covariates_tsv(const std::string& text) {
  std::vector<CovariateRow> rows;
  parse_tsv(text, "firn-covariates v1", kCovariatesColumns, nullptr,
            "covariates file", [&](std::string_view line, std::size_t no) {
              const auto f = split_tabs(line);
              if (f.size() != 4)
                fail("covariates file", no,
                     "expected 4 tab-separated fields, got " +
                         std::to_string(f.size()));
              CovariateRow r;
              r.lat = need_double(f[0], "covariates file", no, "lat");
              r.lon = need_double(f[1], "covariates file", no, "lon");
              r.temperature =
                  need_double(f[2], "covariates file", no, "temperature");
              r.smb = need_double(f[3], "covariates file", no, "smb");
              rows.push_back(r);
            });
  return rows;
}

CoreDataset load_dataset(const std::string& cores_path,
                         const std::string& covariates_path) {
  const auto cores = parse_cores_tsv(read_text_file(cores_path));
  const auto covs = parse_covariates_tsv(read_text_file(covariates_path));
  return build_dataset(cores, covs);
}

void save_dataset(const CoreDataset& ds, const std::string& cores_path,
                  const std::string& covariates_path,
                  const ProvenanceList& provenance) {
  write_text_file(cores_path, cores_to_tsv(ds.cores, provenance));
  std::vector<CovariateRow> rows;
  for (Eigen::Index s = 0; s < ds.n_sites(); ++s)
    rows.push_back({ds.sites.lat[s], ds.sites.lon[s], ds.site_temperature[s],
                    ds.site_smb[s]});
  write_text_file(covariates_path, covariates_to_tsv(rows, provenance));
}

void write_archive(const std::string& path, const ChainArchive& archive) {
  std::string out = "# firn-archive v1\n";
  out += std::string("# code_version ") + version_string + "\n";
  if (!archive.config_digest.empty())
    out += "# config " + archive.config_digest + "\n";
  out += "# seed " + std::to_string(archive.seed) + "\n";
  out += "# n_draws " + std::to_string(archive.n_draws) + "\n";
  for (const auto& [name, rate] : archive.acceptance)
    out += "# acceptance " + name + " " + format_double(rate) + "\n";
  for (const auto& [name, m] : archive.blocks) {
    out += "block " + name + " " + std::to_string(m.rows()) + " " +
           std::to_string(m.cols()) + "\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (c > 0) out += '\t';
        out += format_double(m(r, c));
      }
      out += '\n';
    }
  }
  write_text_file(path, out);
}

ChainArchive read_archive(const std::string& path) {
  const std::string text = read_text_file(path);
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != "# firn-archive v1")
    throw parse_error("archive " + path + ": missing '# firn-archive v1' header");

  ChainArchive a;
  std::size_t i = 1;
  for (; i < lines.size() && !lines[i].empty() && lines[i][0] == '#'; ++i) {
    std::istringstream ss{std::string(lines[i].substr(1))};
    std::string key;
    ss >> key;
    if (key == "seed") {
      ss >> a.seed;
    } else if (key == "n_draws") {
      ss >> a.n_draws;
    } else if (key == "config") {
      ss >> a.config_digest;
    } else if (key == "acceptance") {
      std::string name, val;
      ss >> name >> val;
      double rate;
      if (!parse_double(val, rate)) fail("archive", i + 1, "bad rate");
      a.acceptance.emplace_back(name, rate);
    }
    // other comment keys (code_version) are informational
  }
  while (i < lines.size()) {
    if (lines[i].empty()) {
      ++i;
      continue;
    }
    std::istringstream ss{std::string(lines[i])};
    std::string tag, name;
    long rows = -1, cols = -1;
    ss >> tag >> name >> rows >> cols;
    if (tag != "block" || rows < 0 || cols < 0 || ss.fail())
      fail("archive", i + 1, "expected 'block <name> <rows> <cols>'");
    if (a.blocks.count(name)) fail("archive", i + 1, "duplicate block " + name);
    Eigen::MatrixXd m(rows, cols);
    for (long r = 0; r < rows; ++r) {
      if (i + 1 + static_cast<std::size_t>(r) >= lines.size())
        fail("archive", i + 1, "truncated block " + name);
      const auto f = split_tabs(lines[i + 1 + static_cast<std::size_t>(r)]);
      if (static_cast<long>(f.size()) != cols)
        fail("archive", i + 2 + r, "expected " + std::to_string(cols) + " columns");
      for (long c = 0; c < cols; ++c)
        m(r, c) = need_double(f[static_cast<std::size_t>(c)], "archive",
                              i + 2 + static_cast<std::size_t>(r), "value");
    }
    a.blocks.emplace(std::move(name), std::move(m));
    i += 1 + static_cast<std::size_t>(rows);
  }
  return a;
}

}  // namespace firn
