#ifndef FIRN_IO_HPP
#define FIRN_IO_HPP

#include <string>
#include <utility>
#include <vector>

#include "firn/archive.hpp"
#include "firn/dataset.hpp"

namespace firn {

using ProvenanceList = std::vector<std::pair<std::string, std::string>>;

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Cores file: "# firn-cores v1" header, optional "# key value" provenance
// lines, a column-name line, then one tab-separated row per measurement
// (core-level fields repeated).  Parsers raise parse_error with the
// offending line number.
std::string cores_to_tsv(const std::vector<CoreRecord>& cores,
                         const ProvenanceList& provenance = {});
std::vector<CoreRecord> parse_cores_tsv(const std::string& text,
                                        ProvenanceList* provenance = nullptr);

// Covariates file: "# firn-covariates v1", then lat lon temperature smb.
std::string covariates_to_tsv(const std::vector<CovariateRow>& rows,
                              const ProvenanceList& provenance = {});
std::vector<CovariateRow> parse_covariates_tsv(const std::string& text);

CoreDataset load_dataset(const std::string& cores_path,
                         const std::string& covariates_path);
void save_dataset(const CoreDataset& ds, const std::string& cores_path,
                  const std::string& covariates_path,
                  const ProvenanceList& provenance = {});

// Archive file: "# firn-archive v1" with provenance, then per-parameter
// "block <name> <rows> <cols>" sections of round-trip-exact decimal text.
void write_archive(const std::string& path, const ChainArchive& archive);
ChainArchive read_archive(const std::string& path);

}  // namespace firn

#endif
