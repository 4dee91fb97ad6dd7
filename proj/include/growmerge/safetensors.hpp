// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint container, safetensors-compatible:
//
//   [u64 little-endian header length N]
//   [N bytes of JSON: tensor name -> {dtype, shape, data_offsets:[begin,end)},
//    plus optional "__metadata__" string map]
//   [contiguous little-endian tensor buffer]
//
// Offsets are ascending and gapless. The writer stores the model config as
// metadata key "config" so one file is self-describing.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "growmerge/checkpoint.hpp"
#include "growmerge/tensor.hpp"

namespace growmerge {

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::ordered_json header = nlohmann::ordered_json::object();

    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    meta["config"] = ckpt.config.to_json().dump();
    for (const auto& [k, v] : ckpt.metadata)
        if (k != "config") meta[k] = v;
    header["__metadata__"] = meta;

    std::size_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.empty()) throw ContractError("cannot save tensor with zero-length name");
        nlohmann::ordered_json entry;
        entry["dtype"] = dtype_name(t.dtype());
        entry["shape"] = t.shape();
        entry["data_offsets"] = {offset, offset + t.size_bytes()};
        header[name] = entry;
        offset += t.size_bytes();
    }

    const std::string header_str = header.dump();
    const std::uint64_t header_len = header_str.size();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open \"" + path + "\" for writing");
    out.write(reinterpret_cast<const char*>(&header_len), 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, t] : ckpt.tensors)
        out.write(reinterpret_cast<const char*>(t.raw().data()),
                  static_cast<std::streamsize>(t.size_bytes()));
    out.flush();
    if (!out) throw IoError("write failed for \"" + path + "\"");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open \"" + path + "\"");
    const auto file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);

    if (file_size < 8) throw IoError("corrupt container: file shorter than header length field");
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    if (header_len > file_size - 8)
        throw IoError("corrupt container: declared header length exceeds file size");

    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw IoError("corrupt container: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("corrupt container: malformed header JSON: ") + e.what());
    }
    if (!header.is_object()) throw IoError("corrupt container: header is not a JSON object");

    const std::uint64_t buffer_len = file_size - 8 - header_len;
    std::vector<std::byte> buffer(buffer_len);
    in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer_len));
    if (!in) throw IoError("corrupt container: truncated buffer");

    Checkpoint ckpt;
    struct Extent {
        std::uint64_t begin, end;
        std::string name;
    };
    std::vector<Extent> extents;

    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object())
                throw IoError("corrupt container: __metadata__ is not an object");
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string())
                    throw IoError("corrupt container: metadata value for \"" + k +
                                  "\" is not a string");
                ckpt.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        try {
            const DType dt = dtype_from_name(entry.at("dtype").get<std::string>());
            const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            const auto offs = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
            if (offs.size() != 2 || offs[1] < offs[0])
                throw IoError("corrupt container: bad data_offsets for tensor \"" + name + "\"");
            // Validate the declared extent against the real buffer before allocating.
            if (offs[1] > buffer_len)
                throw IoError("corrupt container: tensor \"" + name +
                              "\" extends past end of buffer (truncated?)");
            std::size_t numel = 1;
            for (std::size_t e : shape) numel *= e;
            if (offs[1] - offs[0] != numel * dtype_size(dt))
                throw IoError("corrupt container: tensor \"" + name + "\" declares " +
                              std::to_string(offs[1] - offs[0]) + " bytes but shape " +
                              shape_to_string(shape) + " implies " +
                              std::to_string(numel * dtype_size(dt)));
            std::vector<std::byte> bytes(buffer.begin() + static_cast<std::ptrdiff_t>(offs[0]),
                                         buffer.begin() + static_cast<std::ptrdiff_t>(offs[1]));
            ckpt.tensors.emplace(name, Tensor::from_raw(dt, shape, std::move(bytes)));
            extents.push_back({offs[0], offs[1], name});
        } catch (const nlohmann::json::exception& e) {
            throw IoError("corrupt container: bad entry for tensor \"" + name + "\": " +
                          e.what());
        }
    }

    // Offsets must tile the buffer exactly: ascending, gapless, non-overlapping.
    std::sort(extents.begin(), extents.end(),
              [](const Extent& a, const Extent& b) { return a.begin < b.begin; });
    std::uint64_t cursor = 0;
    for (const auto& ex : extents) {
        if (ex.begin < cursor)
            throw IoError("corrupt container: tensor \"" + ex.name +
                          "\" overlaps the previous tensor");
        if (ex.begin > cursor)
            throw IoError("corrupt container: gap in buffer before tensor \"" + ex.name + "\"");
        cursor = ex.end;
    }
    if (cursor != buffer_len)
        throw IoError("corrupt container: buffer has " + std::to_string(buffer_len - cursor) +
                      " trailing bytes not covered by any tensor");

    if (auto it = ckpt.metadata.find("config"); it != ckpt.metadata.end()) {
        try {
            ckpt.config = ModelConfig::from_json(nlohmann::json::parse(it->second));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("corrupt container: bad config metadata: ") + e.what());
        }
        ckpt.metadata.erase(it);
    }
    return ckpt;
}

}  // namespace growmerge
