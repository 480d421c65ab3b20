#include "duorun/spmd.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace duorun
{
    double apply_reduce(ReduceOp op, double lhs, double rhs) noexcept
    {
        switch (op)
        {
        case ReduceOp::sum:
            return lhs + rhs;
        case ReduceOp::max:
            return std::max(lhs, rhs);
        case ReduceOp::min:
            return std::min(lhs, rhs);
        }
        return lhs;
    }

    std::string to_string(ReduceOp op)
    {
        switch (op)
        {
        case ReduceOp::sum:
            return "sum";
        case ReduceOp::max:
            return "max";
        case ReduceOp::min:
            return "min";
        }
        return "unknown";
    }
} // namespace duorun

namespace duorun::spmd
{
    std::size_t element_width(ElementKind kind) noexcept
    {
        return kind == ElementKind::raw_bytes ? 1 : 8;
    }

    std::string to_string(ElementKind kind)
    {
        switch (kind)
        {
        case ElementKind::float64:
            return "float64";
        case ElementKind::int64:
            return "int64";
        case ElementKind::raw_bytes:
            return "raw_bytes";
        }
        return "unknown";
    }

    TypedBuffer TypedBuffer::of_float64(std::span<const double> values)
    {
        Bytes b(values.size_bytes());
        if (!values.empty())
        {
            std::memcpy(b.data(), values.data(), b.size());
        }
        return {ElementKind::float64, std::move(b)};
    }

    TypedBuffer TypedBuffer::of_int64(std::span<const std::int64_t> values)
    {
        Bytes b(values.size_bytes());
        if (!values.empty())
        {
            std::memcpy(b.data(), values.data(), b.size());
        }
        return {ElementKind::int64, std::move(b)};
    }

    TypedBuffer TypedBuffer::of_bytes(std::span<const std::uint8_t> bytes)
    {
        return {ElementKind::raw_bytes, Bytes(bytes.begin(), bytes.end())};
    }

    TypedBuffer TypedBuffer::of_bytes(Bytes &&bytes) { return {ElementKind::raw_bytes, std::move(bytes)}; }

    void TypedBuffer::require(ElementKind kind) const
    {
        if (m_kind != kind)
        {
            throw TypeMismatchError("expected " + to_string(kind) + " buffer, got " + to_string(m_kind));
        }
    }

    std::vector<double> TypedBuffer::to_float64() const
    {
        require(ElementKind::float64);
        std::vector<double> out(count());
        if (!out.empty())
        {
            std::memcpy(out.data(), m_bytes.data(), m_bytes.size());
        }
        return out;
    }

    std::vector<std::int64_t> TypedBuffer::to_int64() const
    {
        require(ElementKind::int64);
        std::vector<std::int64_t> out(count());
        if (!out.empty())
        {
            std::memcpy(out.data(), m_bytes.data(), m_bytes.size());
        }
        return out;
    }

    Bytes TypedBuffer::encode() const
    {
        ByteWriter w(kTypedHeaderBytes + m_bytes.size());
        w.put_u32(static_cast<std::uint32_t>(m_kind));
        w.put_u64(count());
        w.put_raw(m_bytes);
        return std::move(w).take();
    }

    TypedBuffer TypedBuffer::decode(std::span<const std::uint8_t> wire)
    {
        if (wire.size() < kTypedHeaderBytes)
        {
            throw ProtocolError("typed message shorter than its 12-byte header");
        }
        ByteReader r(wire);
        const auto code = r.get_u32();
        const auto count = r.get_u64();
        if (code < 1 || code > 3)
        {
            throw ProtocolError("unknown element kind " + std::to_string(code));
        }
        const auto kind = static_cast<ElementKind>(code);
        const auto width = element_width(kind);
        if (count > r.remaining() / width || count * width != r.remaining())
        {
            throw ProtocolError("typed message count " + std::to_string(count) + " does not match " +
                                std::to_string(r.remaining()) + " payload bytes");
        }
        auto raw = r.rest();
        return {kind, Bytes(raw.begin(), raw.end())};
    }

    void Communicator::check_user_tag(Tag tag)
    {
        if (tag >= kReservedTagBase)
        {
            throw ConfigError("tag " + std::to_string(tag) + " is in the reserved range");
        }
    }

    void Communicator::send(int dest, Tag tag, const TypedBuffer &buf)
    {
        check_user_tag(tag);
        m_ep->send_bytes(dest, tag, buf.encode());
    }

    Received Communicator::recv(std::optional<int> src_filter, std::optional<Tag> tag_filter)
    {
        Match m;
        m.src = src_filter;
        if (tag_filter)
        {
            m.tag_lo = m.tag_hi = *tag_filter;
        }
        else
        {
            m.tag_hi = kReservedTagBase - 1;
        }
        auto p = m_ep->recv(m);
        return {p.src, p.tag, TypedBuffer::decode(p.payload)};
    }

    Received Communicator::recv_expect(ElementKind expected, std::optional<int> src_filter,
                                       std::optional<Tag> tag_filter)
    {
        auto got = recv(src_filter, tag_filter);
        if (got.buffer.kind() != expected)
        {
            throw TypeMismatchError("rank " + std::to_string(rank()) + " expected " + to_string(expected) +
                                    " from rank " + std::to_string(got.src) + ", got " +
                                    to_string(got.buffer.kind()));
        }
        return got;
    }

    TypedBuffer Communicator::sendrecv(int dest, const TypedBuffer &send_buf, int src, Tag tag)
    {
        send(dest, tag, send_buf);
        return recv(src, tag).buffer;
    }

    namespace
    {
        Bytes encode_reduction(ReduceOp op, std::span<const double> values)
        {
            ByteWriter w(12 + values.size_bytes());
            w.put_u32(static_cast<std::uint32_t>(op));
            w.put_u64(values.size());
            for (double v : values)
            {
                w.put_f64(v);
            }
            return std::move(w).take();
        }

        std::vector<double> decode_reduction(const Packet &p, ReduceOp expected_op, std::size_t expected_count)
        {
            ByteReader r(p.payload);
            const auto op = static_cast<ReduceOp>(r.get_u32());
            const auto count = r.get_u64();
            if (op != expected_op)
            {
                throw ProtocolError("allreduce op mismatch: rank " + std::to_string(p.src) + " used " +
                                    to_string(op) + ", expected " + to_string(expected_op));
            }
            if (count != expected_count)
            {
                throw ProtocolError("allreduce length mismatch from rank " + std::to_string(p.src));
            }
            std::vector<double> out(count);
            for (auto &v : out)
            {
                v = r.get_f64();
            }
            return out;
        }
    } // namespace

    double Communicator::allreduce(double value, ReduceOp op)
    {
        return allreduce(std::span<const double>(&value, 1), op).front();
    }

    std::vector<double> Communicator::allreduce(std::span<const double> values, ReduceOp op)
    {
        const int me = rank();
        const int world = size();
        std::vector<double> acc(values.begin(), values.end());

        // Up-sweep: at stride s, rank r (r % 2s == 0) folds in r + s.
        int stride = 1;
        for (; stride < world; stride <<= 1)
        {
            if (me % (2 * stride) == 0)
            {
                if (me + stride < world)
                {
                    auto other = decode_reduction(m_ep->recv(Match::from(me + stride, tags::spmd_reduce_up)), op,
                                                  acc.size());
                    for (std::size_t i = 0; i < acc.size(); ++i)
                    {
                        acc[i] = apply_reduce(op, acc[i], other[i]);
                    }
                }
            }
            else
            {
                m_ep->send_bytes(me - stride, tags::spmd_reduce_up, encode_reduction(op, acc));
                break;
            }
        }

        // Down-sweep along the same binomial tree.
        int low = world;
        if (me != 0)
        {
            low = me & -me;
            acc = decode_reduction(m_ep->recv(Match::from(me - low, tags::spmd_reduce_down)), op, acc.size());
        }
        for (int s = std::bit_floor(static_cast<unsigned>(std::max(low, 1))); s >= 1; s >>= 1)
        {
            if (s < low && me + s < world)
            {
                m_ep->send_bytes(me + s, tags::spmd_reduce_down, encode_reduction(op, acc));
            }
        }
        return acc;
    }

    std::vector<TypedBuffer> Communicator::gather(const TypedBuffer &buf, int root)
    {
        std::vector<TypedBuffer> out;
        if (rank() != root)
        {
            m_ep->send_bytes(root, tags::spmd_gather, buf.encode());
            return out;
        }
        out.resize(static_cast<std::size_t>(size()));
        out[static_cast<std::size_t>(root)] = buf;
        for (int r = 0; r < size(); ++r)
        {
            if (r != root)
            {
                out[static_cast<std::size_t>(r)] =
                    TypedBuffer::decode(m_ep->recv(Match::from(r, tags::spmd_gather)).payload);
            }
        }
        return out;
    }

    TypedBuffer Communicator::broadcast(const TypedBuffer &buf, int root)
    {
        if (rank() == root)
        {
            const auto wire = buf.encode();
            for (int r = 0; r < size(); ++r)
            {
                if (r != root)
                {
                    m_ep->send_bytes(r, tags::spmd_bcast, wire);
                }
            }
            return buf;
        }
        return TypedBuffer::decode(m_ep->recv(Match::from(root, tags::spmd_bcast)).payload);
    }
} // namespace duorun::spmd
