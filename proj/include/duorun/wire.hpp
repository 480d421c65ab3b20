#pragma once

// Little-endian primitives shared by the transport framing, the typed-message
// header, and chare state serialization.

#include "duorun/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace duorun
{
    using Bytes = std::vector<std::uint8_t>;

    static_assert(std::endian::native == std::endian::little,
                  "wire encoding assumes a little-endian host");

    class ByteWriter
    {
    public:
        ByteWriter() = default;
        explicit ByteWriter(std::size_t reserve) { m_buf.reserve(reserve); }

        template <class T>
            requires std::is_arithmetic_v<T>
        void put(T value)
        {
            const auto at = m_buf.size();
            m_buf.resize(at + sizeof(T));
            std::memcpy(m_buf.data() + at, &value, sizeof(T));
        }

        void put_u8(std::uint8_t v) { put(v); }
        void put_u16(std::uint16_t v) { put(v); }
        void put_u32(std::uint32_t v) { put(v); }
        void put_u64(std::uint64_t v) { put(v); }
        void put_i64(std::int64_t v) { put(v); }
        void put_f64(double v) { put(v); }

        void put_raw(std::span<const std::uint8_t> bytes)
        {
            m_buf.insert(m_buf.end(), bytes.begin(), bytes.end());
        }

        /// Length-prefixed (u64) byte block.
        void put_blob(std::span<const std::uint8_t> bytes)
        {
            put_u64(bytes.size());
            put_raw(bytes);
        }

        void put_string(std::string_view s)
        {
            put_u64(s.size());
            m_buf.insert(m_buf.end(), s.begin(), s.end());
        }

        template <class T>
            requires std::is_arithmetic_v<T>
        void put_vector(const std::vector<T> &values)
        {
            put_u64(values.size());
            const auto at = m_buf.size();
            m_buf.resize(at + values.size() * sizeof(T));
            if (!values.empty())
            {
                std::memcpy(m_buf.data() + at, values.data(), values.size() * sizeof(T));
            }
        }

        std::size_t size() const noexcept { return m_buf.size(); }
        const Bytes &bytes() const noexcept { return m_buf; }
        Bytes take() && { return std::move(m_buf); }

    private:
        Bytes m_buf;
    };

    class ByteReader
    {
    public:
        explicit ByteReader(std::span<const std::uint8_t> bytes) : m_bytes(bytes) {}

        template <class T>
            requires std::is_arithmetic_v<T>
        T get()
        {
            require(sizeof(T));
            T value;
            std::memcpy(&value, m_bytes.data() + m_pos, sizeof(T));
            m_pos += sizeof(T);
            return value;
        }

        std::uint8_t get_u8() { return get<std::uint8_t>(); }
        std::uint16_t get_u16() { return get<std::uint16_t>(); }
        std::uint32_t get_u32() { return get<std::uint32_t>(); }
        std::uint64_t get_u64() { return get<std::uint64_t>(); }
        std::int64_t get_i64() { return get<std::int64_t>(); }
        double get_f64() { return get<double>(); }

        std::span<const std::uint8_t> get_raw(std::size_t n)
        {
            require(n);
            auto out = m_bytes.subspan(m_pos, n);
            m_pos += n;
            return out;
        }

        std::span<const std::uint8_t> get_blob() { return get_raw(checked_length(1)); }

        std::string get_string()
        {
            auto raw = get_raw(checked_length(1));
            return std::string(raw.begin(), raw.end());
        }

        template <class T>
            requires std::is_arithmetic_v<T>
        std::vector<T> get_vector()
        {
            const auto n = checked_length(sizeof(T));
            auto raw = get_raw(n * sizeof(T));
            std::vector<T> out(n);
            if (n != 0)
            {
                std::memcpy(out.data(), raw.data(), raw.size());
            }
            return out;
        }

        std::span<const std::uint8_t> rest() const noexcept { return m_bytes.subspan(m_pos); }
        std::size_t remaining() const noexcept { return m_bytes.size() - m_pos; }
        bool done() const noexcept { return m_pos == m_bytes.size(); }

    private:
        void require(std::size_t n) const
        {
            if (m_bytes.size() - m_pos < n)
            {
                throw ProtocolError("truncated message: need " + std::to_string(n) + " bytes, have " +
                                    std::to_string(m_bytes.size() - m_pos));
            }
        }

        std::size_t checked_length(std::size_t element_size)
        {
            const auto n = get_u64();
            if (n > remaining() / element_size)
            {
                throw ProtocolError("length prefix " + std::to_string(n) + " exceeds message");
            }
            return static_cast<std::size_t>(n);
        }

        std::span<const std::uint8_t> m_bytes;
        std::size_t m_pos = 0;
    };
} // namespace duorun
