#include "semcodec/param_io.hpp"

#include <map>

namespace semcodec {

void write_param_table(ByteWriter& w, std::span<const Parameter> params)
{
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        if (p.name.size() > 0xFFFF || p.value.shape.size() > 0xFF) {
            throw std::invalid_argument("parameter name or rank too large: " + p.name);
        }
        w.u16(static_cast<std::uint16_t>(p.name.size()));
        w.text(p.name);
        w.u8(static_cast<std::uint8_t>(p.value.shape.size()));
        for (auto d : p.value.shape) {
            w.u32(static_cast<std::uint32_t>(d));
        }
        for (double v : p.value.values) {
            w.f32(static_cast<float>(v));
        }
    }
}

std::vector<Parameter> read_param_table(ByteReader& r)
{
    std::uint32_t count = r.u32();
    std::vector<Parameter> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        Parameter p;
        p.name = r.text(r.u16());
        std::size_t rank = r.u8();
        Shape shape(rank);
        for (auto& d : shape) {
            d = r.u32();
        }
        std::size_t n = shape_size(shape);
        if (r.remaining() / 4 < n) {
            throw FormatError("checkpoint: truncated values for parameter " + p.name);
        }
        std::vector<double> values(n);
        for (auto& v : values) {
            v = static_cast<double>(r.f32());
        }
        p.value = Tensor(std::move(shape), std::move(values));
        out.push_back(std::move(p));
    }
    return out;
}

void round_to_f32(std::span<Parameter> params)
{
    for (auto& p : params) {
        for (auto& v : p.value.values) {
            v = static_cast<double>(static_cast<float>(v));
        }
    }
}

void assign_params(std::span<Parameter> dst, std::span<const Parameter> src)
{
    std::map<std::string, const Parameter*> by_name;
    for (const auto& p : src) {
        by_name[p.name] = &p;
    }
    for (auto& p : dst) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            throw FormatError("checkpoint: missing parameter " + p.name);
        }
        if (it->second->value.shape != p.value.shape) {
            throw FormatError("checkpoint: parameter " + p.name + " has shape " +
                              shape_string(it->second->value.shape) + ", expected " + shape_string(p.value.shape));
        }
        p.value = it->second->value;
    }
}

} // namespace semcodec
