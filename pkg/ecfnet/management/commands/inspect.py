from __future__ import annotations

from ecfnet.checkpoint import load
from ecfnet.management.base import BaseCommand


def node_name(module_name):
    return module_name or "model"


def node_label(module_name, module):
    own = sum(
        parameter.data.size for name, parameter in module.named_parameters() if "." not in name
    )
    label = f"{module_name.rsplit('.', 1)[-1] or 'model'}\n{module.__class__.__name__}"
    return f"{label}\n{own} params" if own else label


def generate_dot(model, max_depth=None):
    """Directed graph of the module tree, one node per module"""
    import graphviz

    result = graphviz.Digraph(graph_attr={"rankdir": "LR"}, node_attr={"shape": "box"})
    for module_name, module in model.named_modules():
        depth = module_name.count(".") + 1 if module_name else 0
        if max_depth is not None and depth > max_depth:
            continue
        result.node(node_name(module_name), label=node_label(module_name, module))
        if module_name:
            parent = module_name.rsplit(".", 1)[0] if "." in module_name else ""
            # Sequential children are named "<parent>.layers.<index>"
            if parent.endswith(".layers") or parent == "layers":
                parent = parent.rsplit(".", 1)[0] if "." in parent else ""
            result.edge(node_name(parent), node_name(module_name))
    return result


def get_graphviz_layouts():
    try:
        import graphviz
    except ModuleNotFoundError:
        return {"sfdp", "circo", "twopi", "dot", "neato", "fdp", "osage", "patchwork"}
    else:
        return graphviz.ENGINES


class Command(BaseCommand):
    help = "List the parameters of a checkpoint with their shapes, the total count and a FLOPs estimate"

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True, help="Checkpoint written by ecfnet train.")
        parser.add_argument(
            "--size",
            type=int,
            default=256,
            help="Side of the square input used for the FLOPs estimate (multiple of 16).",
        )
        parser.add_argument(
            "--graph",
            "-g",
            dest="outputfile",
            help="Render the module tree with GraphViz. Type of output dependent on file extensions, e.g. png or svg.",
        )
        parser.add_argument(
            "--layout",
            "-l",
            default="dot",
            help=f"Layout to be used by GraphViz for visualization. Layouts: {get_graphviz_layouts()}.",
        )
        parser.add_argument("--depth", type=int, default=None, help="Only draw modules up to this nesting depth.")

    def render_output(self, graph, **options):
        filename, graph_format = options["outputfile"].rsplit(".", 1)

        graph.engine = options["layout"]
        graph.format = graph_format
        graph.render(filename)

    def handle(self, **options):
        model = load(options["model"])
        parameters = list(model.named_parameters())
        width = max(len(name) for name, _ in parameters)
        for name, parameter in parameters:
            shape = "x".join(str(size) for size in parameter.shape)
            self.write(f"{name:<{width}}  {shape}")
        size = options["size"]
        self.write(f"parameters: {model.parameter_count()}")
        self.write(f"flops at {size}x{size}: {model.flops(size, size)}")

        if options["outputfile"]:
            self.render_output(generate_dot(model, max_depth=options["depth"]), **options)
