import click


@click.group(name='rsp')
def cli_group():
    """Reinforced-network polarization toolkit."""


from . import commands  # noqa: E402,F401
