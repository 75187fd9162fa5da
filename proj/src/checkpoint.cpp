#include "minibert/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace minibert {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr const char* kMagic = "minibert-checkpoint v1";

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
    throw std::runtime_error("checkpoint " + path + ": " + msg);
}

}  // namespace

void write_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path, "cannot open for writing");
    out << kMagic << "\n";
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        out << "tensor " << name << " " << t.rank();
        for (int64_t d : t.shape) out << " " << d;
        out << " " << offset << "\n";
        offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
    }
    out << "data\n";
    std::vector<float> buf;
    for (const auto& [name, t] : tensors) {
        buf.resize(t.data.size());
        for (size_t i = 0; i < t.data.size(); ++i) buf[i] = static_cast<float>(t.data[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) fail(path, "write failed");
}

std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open");
    std::string line;
    if (!std::getline(in, line) || line != kMagic) fail(path, "bad magic line");

    struct Entry {
        std::string name;
        std::vector<int64_t> shape;
        uint64_t offset;
    };
    std::vector<Entry> entries;
    bool saw_data = false;
    while (std::getline(in, line)) {
        if (line == "data") {
            saw_data = true;
            break;
        }
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind != "tensor") fail(path, "unexpected header line: " + line);
        Entry e;
        int64_t rank = -1;
        ls >> e.name >> rank;
        if (!ls || rank < 0) fail(path, "malformed tensor record: " + line);
        e.shape.resize(rank);
        for (int64_t i = 0; i < rank; ++i) ls >> e.shape[i];
        ls >> e.offset;
        if (!ls) fail(path, "malformed tensor record: " + line);
        entries.push_back(std::move(e));
    }
    if (!saw_data) fail(path, "missing data section");
    std::streampos base = in.tellg();

    std::map<std::string, Tensor> tensors;
    std::vector<float> buf;
    for (const auto& e : entries) {
        if (tensors.count(e.name)) fail(path, "duplicate tensor: " + e.name);
        Tensor t(e.shape);
        buf.resize(t.data.size());
        in.seekg(base + static_cast<std::streamoff>(e.offset));
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) fail(path, "truncated payload reading " + e.name);
        for (size_t i = 0; i < buf.size(); ++i) t.data[i] = static_cast<double>(buf[i]);
        tensors.emplace(e.name, std::move(t));
    }
    return tensors;
}

void save_checkpoint(const std::string& path, const ParameterStore& params) {
    std::map<std::string, Tensor> tensors;
    for (const auto& [name, node] : params.items()) tensors.emplace(name, node->value);
    write_checkpoint(path, tensors);
}

std::vector<std::string> load_checkpoint(const std::string& path, ParameterStore& params,
                                         bool strict) {
    auto tensors = read_checkpoint(path);
    if (strict) {
        for (const auto& [name, node] : params.items())
            if (!tensors.count(name)) fail(path, "missing tensor: " + name);
        for (const auto& [name, t] : tensors)
            if (!params.has(name)) fail(path, "unexpected tensor: " + name);
    }
    std::vector<std::string> loaded;
    for (const auto& [name, t] : tensors) {
        if (!params.has(name)) continue;
        NodePtr node = params.get(name);
        if (node->value.shape != t.shape)
            fail(path, "shape mismatch for " + name + ": file " + Tensor::shape_str(t.shape) +
                           " vs model " + node->value.shape_str());
        node->value = t;
        loaded.push_back(name);
    }
    return loaded;
}

}  // namespace minibert
