#include "duorun/stencil2d.hpp"

namespace duorun::stencil
{
    InitialCondition InitialCondition::hot_north()
    {
        return {[](int, int) { return 0.0; }, [](int i, int) { return i < 0 ? 1.0 : 0.0; }, "hot_north"};
    }

    BlockField::BlockField(const DecompositionPlan &plan, int bi, int bj)
        : m_bi(bi), m_bj(bj), m_rows(plan.block_rows(bi)), m_cols(plan.block_cols(bj)), m_row0(plan.row_begin(bi)),
          m_col0(plan.col_begin(bj))
    {
        if (bi < 0 || bi >= plan.p1 || bj < 0 || bj >= plan.p2)
        {
            throw DecompositionError("block (" + std::to_string(bi) + ", " + std::to_string(bj) +
                                     ") outside the process grid");
        }
        const auto cells = static_cast<std::size_t>(m_rows + 2) * static_cast<std::size_t>(m_cols + 2);
        m_data.assign(cells, 0.0);
        m_next.assign(cells, 0.0);
    }

    void BlockField::fill(const InitialCondition &ic, int n, int m)
    {
        for (int r = -1; r <= m_rows; ++r)
        {
            for (int c = -1; c <= m_cols; ++c)
            {
                const int gi = m_row0 + r;
                const int gj = m_col0 + c;
                const bool inside = gi >= 0 && gi < n && gj >= 0 && gj < m;
                at(r, c) = inside ? ic.interior(gi, gj) : ic.boundary(gi, gj);
            }
        }
    }

    std::vector<double> BlockField::edge(Side side) const
    {
        std::vector<double> out;
        switch (side)
        {
        case Side::north:
        case Side::south:
        {
            const int r = side == Side::north ? 0 : m_rows - 1;
            out.reserve(static_cast<std::size_t>(m_cols));
            for (int c = 0; c < m_cols; ++c)
            {
                out.push_back(at(r, c));
            }
            break;
        }
        case Side::west:
        case Side::east:
        {
            const int c = side == Side::west ? 0 : m_cols - 1;
            out.reserve(static_cast<std::size_t>(m_rows));
            for (int r = 0; r < m_rows; ++r)
            {
                out.push_back(at(r, c));
            }
            break;
        }
        }
        return out;
    }

    void BlockField::set_halo(Side side, const std::vector<double> &values)
    {
        const bool horizontal = side == Side::north || side == Side::south;
        const auto expected = static_cast<std::size_t>(horizontal ? m_cols : m_rows);
        if (values.size() != expected)
        {
            throw ProtocolError("halo of " + std::to_string(values.size()) + " cells for an edge of " +
                                std::to_string(expected));
        }
        for (std::size_t k = 0; k < values.size(); ++k)
        {
            const int t = static_cast<int>(k);
            switch (side)
            {
            case Side::north:
                at(-1, t) = values[k];
                break;
            case Side::south:
                at(m_rows, t) = values[k];
                break;
            case Side::west:
                at(t, -1) = values[k];
                break;
            case Side::east:
                at(t, m_cols) = values[k];
                break;
            }
        }
    }

    std::vector<double> BlockField::interior() const
    {
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(m_rows) * static_cast<std::size_t>(m_cols));
        for (int r = 0; r < m_rows; ++r)
        {
            for (int c = 0; c < m_cols; ++c)
            {
                out.push_back(at(r, c));
            }
        }
        return out;
    }

    void BlockField::set_interior(const std::vector<double> &values)
    {
        if (values.size() != static_cast<std::size_t>(m_rows) * static_cast<std::size_t>(m_cols))
        {
            throw ProtocolError("interior size mismatch");
        }
        std::size_t k = 0;
        for (int r = 0; r < m_rows; ++r)
        {
            for (int c = 0; c < m_cols; ++c)
            {
                at(r, c) = values[k++];
            }
        }
    }

    void BlockField::jacobi_step()
    {
        const auto stride = static_cast<std::size_t>(m_cols + 2);
        m_next = m_data;
        for (int r = 0; r < m_rows; ++r)
        {
            const std::size_t row = static_cast<std::size_t>(r + 1) * stride;
            for (int c = 0; c < m_cols; ++c)
            {
                const std::size_t k = row + static_cast<std::size_t>(c + 1);
                m_next[k] = (m_data[k - stride] + m_data[k + stride] + m_data[k - 1] + m_data[k + 1]) / 4.0;
            }
        }
        m_data.swap(m_next);
    }

    Side opposite(Side side) noexcept
    {
        switch (side)
        {
        case Side::north:
            return Side::south;
        case Side::south:
            return Side::north;
        case Side::west:
            return Side::east;
        case Side::east:
            return Side::west;
        }
        return side;
    }

    std::vector<Neighbor> neighbors(const DecompositionPlan &plan, int bi, int bj)
    {
        std::vector<Neighbor> out;
        if (bi > 0)
        {
            out.push_back({Side::north, (bi - 1) * plan.p2 + bj});
        }
        if (bi + 1 < plan.p1)
        {
            out.push_back({Side::south, (bi + 1) * plan.p2 + bj});
        }
        if (bj > 0)
        {
            out.push_back({Side::west, bi * plan.p2 + bj - 1});
        }
        if (bj + 1 < plan.p2)
        {
            out.push_back({Side::east, bi * plan.p2 + bj + 1});
        }
        return out;
    }

    double checksum(const std::vector<double> &field)
    {
        double sum = 0.0;
        for (double v : field)
        {
            sum += v;
        }
        return sum;
    }
} // namespace duorun::stencil
