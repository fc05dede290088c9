#include "mmrec/checkpoint.hpp"

#include <cstring>

#include "mmrec/binio.hpp"

namespace mmrec {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void write_record(std::ostream& os, const std::string& name, const Tensor& t) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t.shape.size()));
    for (int64_t dim : t.shape) write_u32(os, static_cast<uint32_t>(dim));
    for (double v : t.data) write_f32(os, static_cast<float>(v));
}

struct Record {
    std::string name;
    Tensor tensor;
};

Record read_record(std::istream& is) {
    Record r;
    const uint32_t name_len = read_u32(is, "record name length");
    r.name = read_str(is, name_len, "record name");
    const uint32_t rank = read_u32(is, "record rank");
    std::vector<int64_t> shape(rank);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<int64_t>(read_u32(is, "record dims"));
        numel *= shape[i];
    }
    r.tensor.shape = std::move(shape);
    r.tensor.data.resize(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i)
        r.tensor.data[static_cast<size_t>(i)] =
            static_cast<double>(read_f32(is, "record values"));
    return r;
}

void load_into(Tensor& dst, const Record& rec, const std::string& path) {
    if (dst.shape != rec.tensor.shape)
        throw Error(ErrorKind::validation, path + ": shape mismatch for '" + rec.name +
                                               "' (file " + rec.tensor.shape_str() + ", model " +
                                               dst.shape_str() + ")");
    dst.data = rec.tensor.data;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, AdamW* opt,
                     const CheckpointMeta& meta) {
    std::ofstream os = open_out_binary(path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<uint32_t>(meta.config_text.size()));
    os.write(meta.config_text.data(), static_cast<std::streamsize>(meta.config_text.size()));

    const std::vector<Parameter*> params = model.parameters();
    write_u32(os, static_cast<uint32_t>(params.size()));
    for (Parameter* p : params) write_record(os, p->name, p->value);

    if (opt) {
        const auto& op = opt->params();
        write_u32(os, static_cast<uint32_t>(2 * op.size()));
        for (size_t i = 0; i < op.size(); ++i) {
            write_record(os, "adam_m." + op[i]->name, opt->moment1(i));
            write_record(os, "adam_v." + op[i]->name, opt->moment2(i));
        }
    } else {
        write_u32(os, 0);
    }
    write_u64(os, meta.seed);
    write_u64(os, meta.step);
    if (!os) throw Error(ErrorKind::io, "write failed: " + path);
}

std::string checkpoint_config_text(const std::string& path) {
    std::ifstream is = open_in_binary(path);
    char magic[4];
    read_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw Error(ErrorKind::format, path + ": bad magic, not an MMCK checkpoint");
    const uint32_t version = read_u32(is, "version");
    if (version != kVersion)
        throw Error(ErrorKind::format,
                    path + ": unsupported checkpoint version " + std::to_string(version));
    const uint32_t len = read_u32(is, "config length");
    return read_str(is, len, "config text");
}

CheckpointMeta load_checkpoint(const std::string& path, Model& model, AdamW* opt) {
    std::ifstream is = open_in_binary(path);
    char magic[4];
    read_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw Error(ErrorKind::format, path + ": bad magic, not an MMCK checkpoint");
    const uint32_t version = read_u32(is, "version");
    if (version != kVersion)
        throw Error(ErrorKind::format,
                    path + ": unsupported checkpoint version " + std::to_string(version));
    CheckpointMeta meta;
    const uint32_t len = read_u32(is, "config length");
    meta.config_text = read_str(is, len, "config text");

    const std::vector<Parameter*> params = model.parameters();
    const uint32_t n_params = read_u32(is, "parameter count");
    if (n_params != params.size())
        throw Error(ErrorKind::validation,
                    path + ": parameter count mismatch (file " + std::to_string(n_params) +
                        ", model " + std::to_string(params.size()) + ")");
    for (uint32_t i = 0; i < n_params; ++i) {
        const Record rec = read_record(is);
        if (rec.name != params[i]->name)
            throw Error(ErrorKind::validation, path + ": parameter order mismatch, expected '" +
                                                   params[i]->name + "', found '" + rec.name + "'");
        load_into(params[i]->value, rec, path);
    }

    const uint32_t n_opt = read_u32(is, "optimizer tensor count");
    if (opt) {
        if (n_opt != 2 * opt->params().size())
            throw Error(ErrorKind::validation,
                        path + ": checkpoint has no matching optimizer state");
        for (size_t i = 0; i < opt->params().size(); ++i) {
            const Record m = read_record(is);
            const Record v = read_record(is);
            const std::string& pname = opt->params()[i]->name;
            if (m.name != "adam_m." + pname || v.name != "adam_v." + pname)
                throw Error(ErrorKind::validation,
                            path + ": optimizer state order mismatch at '" + pname + "'");
            load_into(opt->moment1(i), m, path);
            load_into(opt->moment2(i), v, path);
        }
    } else {
        for (uint32_t i = 0; i < n_opt; ++i) (void)read_record(is);
    }
    meta.seed = read_u64(is, "seed");
    meta.step = read_u64(is, "step counter");
    if (opt) opt->set_step_count(static_cast<int64_t>(meta.step));
    if (is.peek() != std::char_traits<char>::eof())
        throw Error(ErrorKind::format, path + ": trailing bytes after checkpoint");
    return meta;
}

}  // namespace mmrec
