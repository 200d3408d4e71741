#include "soapkd/serialize.hpp"

#include <cstdint>
#include <fstream>

#include "soapkd/common.hpp"

namespace soapkd {

namespace {
constexpr char kMagic[8] = {'S', 'O', 'A', 'P', 'K', 'D', '1', '\n'};
}

void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<const Tensorf*>& tensors) {
    nlohmann::json full = meta;
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto* t : tensors) shapes.push_back(t->dims());
    full["tensor_shapes"] = shapes;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("save_checkpoint: cannot open " + path);
    f.write(kMagic, sizeof(kMagic));
    const std::string meta_str = full.dump();
    const std::uint64_t len = meta_str.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(meta_str.data(), std::streamsize(meta_str.size()));
    for (const auto* t : tensors)
        f.write(reinterpret_cast<const char*>(t->data()),
                std::streamsize(t->numel() * sizeof(float)));
    if (!f) throw DataError("save_checkpoint: write failed for " + path);
}

namespace {

nlohmann::json read_meta(std::ifstream& f, const std::string& path) {
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string meta_str(len, '\0');
    f.read(meta_str.data(), std::streamsize(len));
    if (!f) throw DataError("checkpoint: truncated meta in " + path);
    return nlohmann::json::parse(meta_str);
}

}  // namespace

nlohmann::json load_checkpoint_meta(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open " + path);
    return read_meta(f, path);
}

void load_checkpoint_tensors(const std::string& path,
                             const std::vector<Tensorf*>& tensors) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open " + path);
    const nlohmann::json meta = read_meta(f, path);
    const auto& shapes = meta.at("tensor_shapes");
    if (shapes.size() != tensors.size())
        throw DataError("checkpoint: tensor count mismatch in " + path + " (file " +
                        std::to_string(shapes.size()) + ", expected " +
                        std::to_string(tensors.size()) + ")");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto dims = shapes[i].get<std::vector<int>>();
        if (dims != tensors[i]->dims())
            throw DataError("checkpoint: tensor " + std::to_string(i) +
                            " shape mismatch in " + path);
        f.read(reinterpret_cast<char*>(tensors[i]->data()),
               std::streamsize(tensors[i]->numel() * sizeof(float)));
    }
    if (!f) throw DataError("checkpoint: truncated data in " + path);
}

std::uint64_t file_fingerprint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("fingerprint: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (f) {
        f.read(buf, sizeof(buf));
        h = fnv1a64(buf, std::size_t(f.gcount()), h);
    }
    return h;
}

}  // namespace soapkd
