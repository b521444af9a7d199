#pragma once

// Self-describing checkpoint container.
//
//   magic        8 bytes  "DVNCKPT1"
//   header_len   u64 LE
//   header       JSON text (architecture descriptor and config)
//   block_count  u64 LE
//   per block:   name_len u64 LE, name bytes, count u64 LE, count x f64 LE
//   checksum     u64 LE, FNV-1a over every preceding byte

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace dvn {

struct Container {
    nlohmann::json header;
    std::vector<std::pair<std::string, Eigen::VectorXd>> blocks;

    const Eigen::VectorXd& block(const std::string& name) const;
};

std::string encode_container(const Container& c);
Container decode_container(const std::string& bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

}  // namespace dvn
