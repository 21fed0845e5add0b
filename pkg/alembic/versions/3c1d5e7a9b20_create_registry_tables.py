"""create registry tables

Revision ID: 3c1d5e7a9b20
Revises:
Create Date: 2026-10-19 09:12:03.481527

"""
from typing import Sequence, Union

from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic.
revision: str = '3c1d5e7a9b20'
down_revision: Union[str, Sequence[str], None] = None
branch_labels: Union[str, Sequence[str], None] = None
depends_on: Union[str, Sequence[str], None] = None

EXPERIMENT_KINDS = ('taskrel', 'ipdetect', 'unlearn', 'fingerprint-only')
ARTIFACT_KINDS = ('checkpoint', 'refset', 'fingerprint', 'distances', 'affinity', 'dendrogram', 'report', 'manifest')


def upgrade() -> None:
    """Upgrade schema."""
    op.create_table(
        'runs',
        sa.Column('id', sa.String(length=32), nullable=False),
        sa.Column('experiment', sa.Enum(*EXPERIMENT_KINDS, name='experimentkind'), nullable=False),
        sa.Column('config_hash', sa.String(length=16), nullable=False),
        sa.Column('output_dir', sa.String(length=512), nullable=False),
        sa.Column('created_at', sa.DateTime(timezone=True), server_default=sa.text('(CURRENT_TIMESTAMP)'), nullable=True),
        sa.PrimaryKeyConstraint('id'),
    )
    op.create_index(op.f('ix_runs_id'), 'runs', ['id'], unique=False)
    op.create_index(op.f('ix_runs_config_hash'), 'runs', ['config_hash'], unique=False)

    op.create_table(
        'zoo_models',
        sa.Column('id', sa.Integer(), nullable=False),
        sa.Column('run_id', sa.String(length=32), nullable=False),
        sa.Column('model_id', sa.String(length=128), nullable=False),
        sa.Column('kind', sa.String(length=32), nullable=False),
        sa.Column('parent_id', sa.String(length=128), nullable=True),
        sa.Column('seed', sa.String(length=20), nullable=False),
        sa.Column('config_hash', sa.String(length=16), nullable=False),
        sa.Column('checkpoint_path', sa.String(length=512), nullable=True),
        sa.Column('created_at', sa.DateTime(timezone=True), server_default=sa.text('(CURRENT_TIMESTAMP)'), nullable=True),
        sa.ForeignKeyConstraint(['run_id'], ['runs.id']),
        sa.PrimaryKeyConstraint('id'),
    )
    op.create_index(op.f('ix_zoo_models_id'), 'zoo_models', ['id'], unique=False)
    op.create_index(op.f('ix_zoo_models_run_id'), 'zoo_models', ['run_id'], unique=False)

    op.create_table(
        'artifacts',
        sa.Column('id', sa.Integer(), nullable=False),
        sa.Column('run_id', sa.String(length=32), nullable=False),
        sa.Column('kind', sa.Enum(*ARTIFACT_KINDS, name='artifactkind'), nullable=False),
        sa.Column('model_id', sa.String(length=128), nullable=True),
        sa.Column('name', sa.String(length=255), nullable=False),
        sa.Column('path', sa.String(length=512), nullable=False),
        sa.Column('config_hash', sa.String(length=16), nullable=False),
        sa.Column('crc32', sa.BigInteger(), nullable=False),
        sa.Column('created_at', sa.DateTime(timezone=True), server_default=sa.text('(CURRENT_TIMESTAMP)'), nullable=True),
        sa.ForeignKeyConstraint(['run_id'], ['runs.id']),
        sa.PrimaryKeyConstraint('id'),
    )
    op.create_index(op.f('ix_artifacts_id'), 'artifacts', ['id'], unique=False)
    op.create_index(op.f('ix_artifacts_run_id'), 'artifacts', ['run_id'], unique=False)


def downgrade() -> None:
    """Downgrade schema."""
    op.drop_index(op.f('ix_artifacts_run_id'), table_name='artifacts')
    op.drop_index(op.f('ix_artifacts_id'), table_name='artifacts')
    op.drop_table('artifacts')
    op.drop_index(op.f('ix_zoo_models_run_id'), table_name='zoo_models')
    op.drop_index(op.f('ix_zoo_models_id'), table_name='zoo_models')
    op.drop_table('zoo_models')
    op.drop_index(op.f('ix_runs_config_hash'), table_name='runs')
    op.drop_index(op.f('ix_runs_id'), table_name='runs')
    op.drop_table('runs')
